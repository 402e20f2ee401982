"""
Training on the four synthetic motions
======================================

Usage: python 03_train_synthetic.py [per_class] [epochs]
The defaults (25 per class, up to 30 epochs) take a few minutes per epoch
pair on one core; pass smaller numbers for a quick look.
"""

import logging
import sys

import numpy as np

from seqpointnet.config import ModelConfig, RunConfig
from seqpointnet.data import centroid_trajectory_baseline, synth_dataset
from seqpointnet.model import init_params
from seqpointnet.runtime import ExecutionPlan
from seqpointnet.training import evaluate, fit

logging.basicConfig(level=logging.INFO, format="%(message)s")
per_class = int(sys.argv[1]) if len(sys.argv) > 1 else 25
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 30

train = synth_dataset(per_class, seed=0)
test = synth_dataset(max(per_class * 2 // 5, 1), seed=1000, split="test")

# the task is easy for a hand-made feature: centroid path relative to frame 0
print("centroid-trajectory baseline:", centroid_trajectory_baseline(train, test))

run = RunConfig(model=ModelConfig(num_classes=4), epochs=epochs, target_accuracy=0.9)
params = init_params(run.model, run.seed, np.float32)
print("untrained:", evaluate(test, params, run.model, ExecutionPlan(precision="float32")))

history = fit(train, test, params, run)
print("final test accuracy:", history[-1].eval_accuracy, "after", len(history), "epochs")
