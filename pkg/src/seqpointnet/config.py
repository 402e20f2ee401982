"""Model and run configuration plus the flat ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class SetAbstractionConfig:
    centroids: int
    radius: float
    group_size: int
    widths: tuple[int, ...]
    attention: bool


@dataclass(frozen=True)
class ModelConfig:
    num_points: int = 512
    frames: int = 20
    sa1_centroids: int = 128
    sa1_radius: float = 0.06
    sa1_group: int = 48
    sa1_widths: tuple[int, ...] = (64, 64, 128)
    sa1_attention: bool = False
    sa2_centroids: int = 32
    sa2_radius: float = 0.1
    sa2_group: int = 16
    sa2_widths: tuple[int, ...] = (128, 128, 256)
    sa2_attention: bool = True
    global_widths: tuple[int, ...] = (256, 512, 1024)
    attention_reduction: int = 16
    attention_min_width: int = 4
    dislocation_layers: int = 2
    use_displacement: bool = True
    time_origin: int = 0
    pyramid: bool = True
    head_hidden: int = 256
    num_classes: int = 60

    @property
    def d_h(self) -> int:
        return self.global_widths[-1]

    @property
    def sa1(self) -> SetAbstractionConfig:
        return SetAbstractionConfig(self.sa1_centroids, self.sa1_radius, self.sa1_group,
                                    self.sa1_widths, self.sa1_attention)

    @property
    def sa2(self) -> SetAbstractionConfig:
        return SetAbstractionConfig(self.sa2_centroids, self.sa2_radius, self.sa2_group,
                                    self.sa2_widths, self.sa2_attention)

    @property
    def pooled_width(self) -> int:
        return (3 if self.pyramid else 1) * self.d_h

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


def tiny_config(**overrides) -> ModelConfig:
    """Small network used for gradient checks and fast tests."""
    cfg = ModelConfig(
        num_points=8, frames=3,
        sa1_centroids=4, sa1_radius=0.9, sa1_group=3, sa1_widths=(4, 4, 8),
        sa2_centroids=2, sa2_radius=1.2, sa2_group=2, sa2_widths=(8, 8, 16),
        global_widths=(16, 16, 32), head_hidden=8, num_classes=4,
    )
    return cfg.replace(**overrides)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=lambda: ModelConfig(num_classes=4))
    seed: int = 0
    data_dir: str = "data"
    out_dir: str = "run"
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    lr_decay: float = 0.5
    lr_period: int = 10
    workers: int = 1
    precision: str = "float32"
    augment: bool = True
    aug_rotate_y_deg: float = 15.0
    aug_rotate_x_deg: float = 10.0
    aug_jitter_sigma: float = 0.01
    aug_jitter_clip: float = 0.05
    aug_dropout_max: float = 0.2
    target_accuracy: float = 0.0

    def to_text(self) -> str:
        lines = []
        for obj in (self.model, self):
            for f in dataclasses.fields(obj):
                if f.name == "model":
                    continue
                lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        model_types = typing.get_type_hints(ModelConfig)
        run_types = typing.get_type_hints(cls)
        model_kw, run_kw = {}, {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in model_types:
                model_kw[key] = _parse(value, model_types[key], key)
            elif key in run_types and key != "model":
                run_kw[key] = _parse(value, run_types[key], key)
            else:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
        return cls(model=ModelConfig(**model_kw), **run_kw)

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, typ, key):
    try:
        if typ is bool:
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        if typing.get_origin(typ) is tuple:
            return tuple(int(v) for v in text.split(",") if v.strip())
        return text
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {text!r}") from None
