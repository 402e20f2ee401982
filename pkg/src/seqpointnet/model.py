"""SequentialPointNet assembly: parameter layout, front part, back part, loss.

The network is split at the frame-mixing layer. :func:`front_unit` maps one
frame (and its temporal index) to its fused hyperpoint row and touches no
other frame; :func:`back_part` pools the stacked rows and classifies. Every
forward path, serial or parallel, goes through these two functions so the
arithmetic is identical regardless of scheduling.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .config import ModelConfig
from .embed import attention_width, embed_frame, frame_geometry
from .mixer import (classifier_head, displacement_table, frame_mix, fuse_multilevel,
                    space_dislocation_layer)
from .params import ParameterStore


def parameter_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    shapes: OrderedDict[str, tuple[int, ...]] = OrderedDict()

    def mlp(prefix, n_in, widths):
        for i, w in enumerate(widths):
            shapes[f"{prefix}.w{i}"] = (n_in, w)
            shapes[f"{prefix}.b{i}"] = (w,)
            n_in = w

    c_in = 0
    for prefix, sa in (("sa1", cfg.sa1), ("sa2", cfg.sa2)):
        channels = 4 + c_in
        if sa.attention:
            hidden = attention_width(channels, cfg)
            shapes[f"{prefix}.att.w1"] = (channels, hidden)
            shapes[f"{prefix}.att.w2"] = (hidden, channels)
        mlp(prefix, channels, sa.widths)
        c_in = sa.widths[-1]
    mlp("glob", 3 + c_in, cfg.global_widths)
    for i in range(cfg.dislocation_layers):
        shapes[f"mix{i}.w"] = (cfg.d_h, cfg.d_h)
        shapes[f"mix{i}.b"] = (cfg.d_h,)
    shapes["head.w0"] = (cfg.pooled_width, cfg.head_hidden)
    shapes["head.b0"] = (cfg.head_hidden,)
    shapes["head.w1"] = (cfg.head_hidden, cfg.num_classes)
    shapes["head.b1"] = (cfg.num_classes,)
    return shapes


def init_params(cfg: ModelConfig, seed=0, dtype=np.float64, bias_scale=0.0) -> ParameterStore:
    """He-uniform weights (bound ``sqrt(6 / fan_in)``), biases zero unless ``bias_scale``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    store = ParameterStore()
    for name, shape in parameter_shapes(cfg).items():
        if len(shape) == 2:
            bound = np.sqrt(6.0 / shape[0])
            arr = rng.uniform(-bound, bound, shape)
        else:
            arr = rng.uniform(-bias_scale, bias_scale, shape) if bias_scale else np.zeros(shape)
        store.add(name, arr.astype(dtype))
    return store


@dataclass
class FrontOutput:
    hyperpoint: Tensor       # (1, d_h)
    levels: list[Tensor]     # hyperpoint followed by each dislocation layer output
    fused: Tensor            # (1, d_h)


def front_unit(points, t: int, P: Mapping[str, Tensor], cfg: ModelConfig,
               geometry=None) -> FrontOutput:
    """Embedding plus every space dislocation layer for frame ``t``."""
    graph = P["sa1.w0"].graph
    dtype = P["sa1.w0"].data.dtype
    F = ad.reshape(embed_frame(points, P, cfg, geometry), (1, cfg.d_h))
    if cfg.use_displacement:
        row = displacement_table(t + 1, cfg.d_h, cfg.time_origin)[t:t + 1]
    else:
        row = np.zeros((1, cfg.d_h))
    dv = graph.leaf(row.astype(dtype))
    levels = [F]
    x = F
    for i in range(cfg.dislocation_layers):
        x = space_dislocation_layer(x, dv, P[f"mix{i}.w"], P[f"mix{i}.b"])
        levels.append(x)
    return FrontOutput(F, levels, fuse_multilevel(levels))


def back_part(fused: Tensor, P: Mapping[str, Tensor], cfg: ModelConfig):
    """Returns ``(global_feature, logits)``."""
    R = frame_mix(fused, cfg)
    return R, classifier_head(R, P)


@dataclass
class ForwardResult:
    graph: Graph
    hyperpoints: Tensor
    fused: Tensor
    global_feature: Tensor
    logits: Tensor


def forward(frames: Sequence[np.ndarray], P: Mapping[str, Tensor], cfg: ModelConfig) -> ForwardResult:
    """Whole network on one graph (serial reference path)."""
    fronts = [front_unit(f, t, P, cfg) for t, f in enumerate(frames)]
    hyper = ad.concat([fr.hyperpoint for fr in fronts], axis=0)
    fused = ad.concat([fr.fused for fr in fronts], axis=0)
    R, logits = back_part(fused, P, cfg)
    return ForwardResult(P["sa1.w0"].graph, hyper, fused, R, logits)


def predict(frames, params: ParameterStore, cfg: ModelConfig) -> np.ndarray:
    g = Graph()
    return forward(frames, params.attach(g), cfg).logits.data.copy()


def front_row(points, t, params: ParameterStore, cfg: ModelConfig) -> np.ndarray:
    """Fused hyperpoint row of one frame as a plain array (inference only)."""
    g = Graph()
    return front_unit(points, t, params.attach(g), cfg).fused.data[0].copy()


def back_logits(rows: np.ndarray, params: ParameterStore, cfg: ModelConfig) -> np.ndarray:
    g = Graph()
    _, logits = back_part(g.leaf(rows), params.attach(g), cfg)
    return logits.data.copy()


def sequence_loss(frames, label: int, P, cfg: ModelConfig) -> Tensor:
    return ad.softmax_cross_entropy(forward(frames, P, cfg).logits, label)


class FrameTape:
    """Recorded front unit of one frame, kept until its gradient seed is known."""

    def __init__(self, points, t, params: ParameterStore, cfg: ModelConfig, geometry=None):
        self.graph = Graph()
        self.P = params.attach(self.graph, requires_grad=True)
        self.out = front_unit(points, t, self.P, cfg, geometry)

    @property
    def row(self) -> np.ndarray:
        return self.out.fused.data[0]

    def gradients(self, seed_row: np.ndarray) -> dict[str, np.ndarray]:
        grads = self.graph.backward(self.out.fused, seed_row[None, :])
        return {k: grads[t.node] for k, t in self.P.items() if t.node in grads}


def back_gradients(rows: np.ndarray, label: int, params: ParameterStore, cfg: ModelConfig):
    """Loss, logits, head/back parameter grads and the gradient w.r.t. each fused row."""
    g = Graph()
    fused = g.leaf(rows, requires_grad=True)
    P = params.attach(g, requires_grad=True)
    _, logits = back_part(fused, P, cfg)
    loss = ad.softmax_cross_entropy(logits, label)
    grads = g.backward(loss)
    pgrads = {k: grads[t.node] for k, t in P.items() if t.node in grads}
    return float(loss.data), logits.data.copy(), pgrads, grads[fused.node]


def geometry_for(frames, cfg: ModelConfig):
    return [frame_geometry(f, cfg) for f in frames]
