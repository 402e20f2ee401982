"""Hyperpoint embedding: two set-abstraction stages and a global PointNet layer.

One frame of ``num_points`` xyz points becomes one ``d_h`` vector. The
grouping geometry depends only on the points, so :func:`frame_geometry` is
computed once per frame and the differentiable part works on fixed indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig, SetAbstractionConfig
from .geometry import LocalRegions, farthest_point_sample, group_and_normalize


@dataclass
class FrameGeometry:
    sa1: LocalRegions
    sa2: LocalRegions  # member indices point into the stage-1 centroids


def frame_geometry(points: np.ndarray, cfg: ModelConfig) -> FrameGeometry:
    points = np.asarray(points)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"frame must be (n, 3), got {points.shape}")
    if not np.isfinite(points).all():
        raise ValueError("frame contains non-finite coordinates")
    sa1 = group_and_normalize(points, farthest_point_sample(points, cfg.sa1_centroids),
                              cfg.sa1_radius, cfg.sa1_group)
    cents = sa1.centroids
    sa2 = group_and_normalize(cents, farthest_point_sample(cents, cfg.sa2_centroids),
                              cfg.sa2_radius, cfg.sa2_group)
    return FrameGeometry(sa1, sa2)


def attention_width(channels: int, cfg: ModelConfig) -> int:
    return max(channels // cfg.attention_reduction, cfg.attention_min_width)


def shared_mlp(x: Tensor, P: Mapping[str, Tensor], prefix: str, layers: int) -> Tensor:
    """Pointwise affine + ReLU layers applied along the trailing axis."""
    for i in range(layers):
        x = ad.relu(ad.add(ad.matmul(x, P[f"{prefix}.w{i}"]), P[f"{prefix}.b{i}"]))
    return x


def channel_attention(x: Tensor, P: Mapping[str, Tensor], prefix: str) -> Tensor:
    """Per-channel scores in (0, 1) shared by every member of every group in ``x``.

    ``x`` is ``(groups, members, channels)``. Average- and max-pooled member
    statistics go through one bias-free bottleneck MLP, are summed and squashed;
    the per-group scores are then averaged over groups.
    """
    w1, w2 = P[f"{prefix}.w1"], P[f"{prefix}.w2"]

    def mlp(z):
        return ad.matmul(ad.relu(ad.matmul(z, w1)), w2)

    avg = ad.mean_reduce(x, axis=1)
    mx = ad.max_reduce(x, axis=1)
    scores = ad.sigmoid(ad.add(mlp(avg), mlp(mx)))
    return ad.mean_reduce(scores, axis=0)


def augmentation_pointnet(local: Tensor, P: Mapping[str, Tensor], prefix: str,
                          sa: SetAbstractionConfig, regions: LocalRegions | None = None) -> Tensor:
    """Group descriptors ``(groups, c_out)`` from ``(groups, members, 4 + c_in)`` inputs.

    The centroid coordinates are concatenated by the caller, which owns them.
    Given ``regions`` and no attention, padding duplicates are skipped: the
    MLP runs on distinct members only and a segmented max pools them, which
    yields the same maximum.
    """
    expected = P[f"{prefix}.w0"].shape[0]
    if local.shape[-1] != expected:
        raise ad.ShapeError(f"{prefix}: group width {local.shape[-1]} != MLP input {expected}")
    if sa.attention:
        local = ad.scale(local, channel_attention(local, P, f"{prefix}.att"))
    elif regions is not None:
        m, k, c = local.shape
        flat, starts = regions.distinct_slots()
        rows = ad.gather_rows(ad.reshape(local, (m * k, c)), flat)
        return ad.segment_max(shared_mlp(rows, P, prefix, len(sa.widths)), starts)
    h = shared_mlp(local, P, prefix, len(sa.widths))
    return ad.max_reduce(h, axis=1)


def embed_frame(points, P: Mapping[str, Tensor], cfg: ModelConfig,
                geometry: FrameGeometry | None = None) -> Tensor:
    """Hyperpoint ``(d_h,)`` of one frame, recorded on the graph that owns ``P``."""
    graph = next(iter(P.values())).graph
    if geometry is None:
        geometry = frame_geometry(points, cfg)
    dtype = P["sa1.w0"].data.dtype
    g1, g2 = geometry.sa1, geometry.sa2

    local1 = graph.leaf(g1.local_inputs().astype(dtype, copy=False))
    feats1 = augmentation_pointnet(local1, P, "sa1", cfg.sa1, g1)

    local2 = graph.leaf(g2.local_inputs().astype(dtype, copy=False))
    grouped = ad.gather_rows(feats1, g2.member_index)
    feats2 = augmentation_pointnet(ad.concat([local2, grouped], axis=-1), P, "sa2", cfg.sa2, g2)

    coords2 = graph.leaf(g2.centroids.astype(dtype, copy=False))
    h = shared_mlp(ad.concat([coords2, feats2], axis=-1), P, "glob", len(cfg.global_widths))
    return ad.max_reduce(h, axis=0)
