"""
From a moving primitive to local point groups
=============================================

One synthetic sequence, then the sampling and grouping that feed the first
set-abstraction stage.
"""

import numpy as np

from seqpointnet.config import ModelConfig
from seqpointnet.data import CLASS_NAMES, synth_sequence
from seqpointnet.geometry import farthest_point_sample, group_and_normalize, normalize_sequence

rng = np.random.default_rng(0)
raw = synth_sequence(0, rng)          # translate-x, metres
seq = normalize_sequence(raw)         # one shift and scale for all 20 frames
print(CLASS_NAMES[0], raw.shape, "x drift", raw[-1, :, 0].mean() - raw[0, :, 0].mean())
print("normalised bbox", seq.min(axis=(0, 1)).round(3), seq.max(axis=(0, 1)).round(3))

cfg = ModelConfig()
frame = seq[0]
cent = farthest_point_sample(frame, cfg.sa1_centroids)
print("first centroids", cent[:8])    # seeded at the lexicographic max

groups = group_and_normalize(frame, cent, cfg.sa1_radius, cfg.sa1_group)
print("member block", groups.member_index.shape)
print("distinct members per group: min %d, median %d, max %d"
      % (groups.counts.min(), np.median(groups.counts), groups.counts.max()))

# empty balls fall back to the nearest point, repeated
lonely = np.flatnonzero(groups.distances[:, 0] > cfg.sa1_radius)
print("groups with nothing inside the radius:", len(lonely))

# relative coordinates plus distance: what the shared MLP actually sees
j = groups.counts.argmax()
print(groups.local_inputs()[j, :4].round(4))
