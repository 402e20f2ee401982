"""Frame-parallel point cloud sequence classifier (hyperpoint embedding + mixer) in numpy."""

from .config import ModelConfig, RunConfig, tiny_config
from .model import forward, init_params, predict
from .params import ParameterStore, load_checkpoint, save_checkpoint
from .runtime import ExecutionPlan, FrameRuntime, bench

__all__ = [
    "ExecutionPlan", "FrameRuntime", "ModelConfig", "ParameterStore", "RunConfig",
    "bench", "forward", "init_params", "load_checkpoint", "predict", "save_checkpoint",
    "tiny_config",
]
__version__ = "0.1.0"
