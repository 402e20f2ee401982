"""
One forward pass, then the same pass fanned out over workers
============================================================
"""

import numpy as np

from seqpointnet.autodiff import Graph
from seqpointnet.config import ModelConfig
from seqpointnet.data import synth_dataset
from seqpointnet.model import forward, init_params
from seqpointnet.runtime import ExecutionPlan, FrameRuntime, bench

cfg = ModelConfig(num_classes=4)
params = init_params(cfg, seed=0)
print("parameters:", params.count())

seqs = [r.frames for r in synth_dataset(1, seed=3)]
out = forward(seqs[0], params.attach(Graph()), cfg)
print("hyperpoints", out.hyperpoints.shape, "fused", out.fused.shape,
      "global", out.global_feature.shape, "logits", out.logits.shape)

# every frame is an independent task; the back part waits for all slots
for w in (1, 2, 4):
    with FrameRuntime(params, cfg, ExecutionPlan(workers=w)) as rt:
        logits = rt.infer(seqs)
    print(w, "workers:", logits.argmax(axis=1), logits[0, :2])

# timing table; on a single core the speedup column hovers around 1
print(bench(seqs, params, cfg, workers=(1, 2), repetitions=2).to_text())
