"""Hyperpoint-Mixer: displacement vectors, space dislocation, fusion, pyramid pooling, head."""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .config import ModelConfig


def displacement_table(frames: int, d_h: int, origin: int = 0, dtype=np.float64) -> np.ndarray:
    """Sinusoidal displacement vectors, one row per temporal position.

    Even channels hold ``sin(t / 10000**(2h/d_h))`` and odd channels the
    matching cosine; ``t`` starts at ``origin``.
    """
    if d_h % 2:
        raise ValueError(f"displacement_table: d_h must be even, got {d_h}")
    t = np.arange(origin, origin + frames, dtype=np.float64)[:, None]
    h = np.arange(d_h // 2, dtype=np.float64)[None, :]
    angle = t / 10000.0 ** (2 * h / d_h)
    table = np.empty((frames, d_h))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table.astype(dtype, copy=False)


def space_dislocation_layer(x: Tensor, dv: Tensor, w: Tensor, b: Tensor, activation=True) -> Tensor:
    """``relu((x + dv) @ w + b)`` with one weight set shared over all rows."""
    if x.shape != dv.shape:
        raise ShapeError(f"space_dislocation_layer: {x.shape} vs displacement {dv.shape}")
    y = ad.add(ad.matmul(ad.add(x, dv), w), b)
    return ad.relu(y) if activation else y


def fuse_multilevel(levels: Sequence[Tensor]) -> Tensor:
    if not levels:
        raise ValueError("fuse_multilevel: no levels")
    return ad.add_n(list(levels))


def pyramid_partitions(frames: int) -> list[tuple[int, int]]:
    """Whole sequence, then first and second half; the first half gets the odd frame."""
    if frames < 2:
        raise ValueError(f"pyramid pooling needs at least 2 frames, got {frames}")
    mid = math.ceil(frames / 2)
    return [(0, frames), (0, mid), (mid, frames)]


def pyramid_max_pool(fused: Tensor) -> Tensor:
    T = fused.shape[0]
    parts = []
    for lo, hi in pyramid_partitions(T):
        part = fused if (lo, hi) == (0, T) else ad.slice_rows(fused, lo, hi)
        parts.append(ad.max_reduce(part, axis=0))
    return ad.concat(parts, axis=0)


def frame_mix(fused: Tensor, cfg: ModelConfig) -> Tensor:
    if cfg.pyramid:
        return pyramid_max_pool(fused)
    return ad.max_reduce(fused, axis=0)


def classifier_head(R: Tensor, P: Mapping[str, Tensor]) -> Tensor:
    w0 = P["head.w0"]
    if R.shape != (w0.shape[0],):
        raise ShapeError(f"classifier_head: feature {R.shape} vs weight {w0.shape}")
    hidden = ad.relu(ad.add(ad.matmul(R, w0), P["head.b0"]))
    return ad.add(ad.matmul(hidden, P["head.w1"]), P["head.b1"])


def _dense(n_in, n_out, bias=True):
    return n_in * n_out + (n_out if bias else 0)


def _mlp(n_in, widths):
    total = 0
    for w in widths:
        total += _dense(n_in, w)
        n_in = w
    return total


def count_parameters(cfg: ModelConfig) -> int:
    """Trainable scalar count from layer widths alone."""
    total = 0
    c_in = 0
    for sa in (cfg.sa1, cfg.sa2):
        channels = 3 + 1 + c_in
        if sa.attention:
            hidden = max(channels // cfg.attention_reduction, cfg.attention_min_width)
            total += _dense(channels, hidden, bias=False) + _dense(hidden, channels, bias=False)
        total += _mlp(channels, sa.widths)
        c_in = sa.widths[-1]
    total += _mlp(3 + c_in, cfg.global_widths)
    total += cfg.dislocation_layers * _dense(cfg.d_h, cfg.d_h)
    total += _dense(cfg.pooled_width, cfg.head_hidden) + _dense(cfg.head_hidden, cfg.num_classes)
    return total
