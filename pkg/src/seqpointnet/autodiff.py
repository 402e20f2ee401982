"""Tape-based reverse-mode automatic differentiation over numpy arrays.

A :class:`Graph` is an append-only tape. Every op appends one node holding
its output and a vector-Jacobian product closure; :meth:`Graph.backward`
walks the tape in strict reverse creation order, summing gradients from all
consumers of a node.

Broadcasting is deliberately limited to the two patterns the network needs:
a trailing-axis vector added to (``add``) or multiplied into (``scale``) a
batch of rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""


def _shape_error(op, a, b, why="shapes do not conform"):
    return ShapeError(f"{op}: {why}: {tuple(a)} vs {tuple(b)}")


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    value: np.ndarray
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    requires_grad: bool
    extra: dict = field(default_factory=dict)


class Tensor:
    """Handle to one node of a :class:`Graph`."""

    __slots__ = ("graph", "node")

    def __init__(self, graph: "Graph", node: int):
        self.graph = graph
        self.node = node

    @property
    def data(self) -> np.ndarray:
        return self.graph.nodes[self.node].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def requires_grad(self) -> bool:
        return self.graph.nodes[self.node].requires_grad

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(node={self.node}, shape={self.shape}, dtype={self.data.dtype})"

    # operator sugar for tests and small graphs
    def __add__(self, other):
        return add(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Graph:
    """Append-only computation tape. Not thread-safe; use one per thread."""

    def __init__(self):
        self.nodes: list[Node] = []

    def leaf(self, value, requires_grad=False, name=None) -> Tensor:
        value = np.asarray(value)
        if value.dtype.kind != "f":
            value = value.astype(np.float64)
        node = Node("leaf", (), value, None, requires_grad, {"name": name} if name else {})
        self.nodes.append(node)
        return Tensor(self, len(self.nodes) - 1)

    def record(self, kind, inputs: Sequence[Tensor], value, vjp, **extra) -> Tensor:
        """Append an op node. ``vjp(g)`` returns one gradient (or None) per input."""
        for t in inputs:
            if t.graph is not self:
                raise ValueError(f"{kind}: input tensor belongs to a different graph")
        requires = any(t.requires_grad for t in inputs)
        node = Node(kind, tuple(t.node for t in inputs), value, vjp if requires else None,
                    requires, extra)
        self.nodes.append(node)
        return Tensor(self, len(self.nodes) - 1)

    def backward(self, output: Tensor, grad_output=None) -> dict[int, np.ndarray]:
        """Gradients of ``output`` w.r.t. every node that requires grad, keyed by node id.

        ``output`` must be scalar unless an explicit ``grad_output`` seed is given.
        """
        out = self.nodes[output.node]
        if grad_output is None:
            if out.value.size != 1:
                raise ShapeError(f"backward: loss must be scalar, got shape {out.value.shape}")
            grad_output = np.ones_like(out.value)
        else:
            grad_output = np.asarray(grad_output, dtype=out.value.dtype)
            if grad_output.shape != out.value.shape:
                raise _shape_error("backward", grad_output.shape, out.value.shape,
                                   "seed gradient shape differs from output")
        grads: dict[int, np.ndarray] = {output.node: grad_output}
        owned: set[int] = set()  # buffers allocated here, safe to accumulate into
        for nid in range(output.node, -1, -1):
            g = grads.get(nid)
            node = self.nodes[nid]
            if g is None or node.vjp is None:
                continue
            for src, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or not self.nodes[src].requires_grad:
                    continue
                if src not in grads:
                    grads[src] = gi
                elif src in owned:
                    grads[src] += gi
                else:
                    grads[src] = grads[src] + gi
                    owned.add(src)
        return {k: v for k, v in grads.items() if self.nodes[k].requires_grad}


def _wants(t: Tensor) -> bool:
    return t.requires_grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``(..., K) @ (K, N) -> (..., N)``; ``b`` is a 2-D weight matrix."""
    A, B = a.data, b.data
    if B.ndim != 2 or A.ndim < 1 or A.shape[-1] != B.shape[0]:
        raise _shape_error("matmul", A.shape, B.shape)
    need_a, need_b = _wants(a), _wants(b)

    # fold leading axes so batched inputs hit one GEMM
    A2 = A.reshape(-1, A.shape[-1])
    out_shape = A.shape[:-1] + (B.shape[1],)

    def vjp(g):
        g2 = g.reshape(-1, B.shape[1])
        ga = (g2 @ B.T).reshape(A.shape) if need_a else None
        gb = A2.T @ g2 if need_b else None
        return ga, gb

    return a.graph.record("matmul", (a, b), (A2 @ B).reshape(out_shape), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a vector matching ``a``'s trailing axis."""
    A, B = a.data, b.data
    if A.shape == B.shape:
        def vjp(g):
            return g, g
    elif B.ndim == 1 and A.ndim >= 1 and A.shape[-1] == B.shape[0]:
        def vjp(g):
            return g, g.reshape(-1, g.shape[-1]).sum(axis=0)
    else:
        raise _shape_error("add", A.shape, B.shape)
    return a.graph.record("add", (a, b), A + B, vjp)


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum of equally shaped tensors, accumulated left to right."""
    out = tensors[0]
    for t in tensors[1:]:
        if t.shape != out.shape:
            raise _shape_error("add_n", out.shape, t.shape)
        out = add(out, t)
    return out


def concat(tensors: Sequence[Tensor], axis=-1) -> Tensor:
    arrays = [t.data for t in tensors]
    ref = arrays[0]
    ax = axis % ref.ndim
    for arr in arrays[1:]:
        if arr.ndim != ref.ndim or any(
                arr.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise _shape_error("concat", ref.shape, arr.shape)
    bounds = np.cumsum([arr.shape[ax] for arr in arrays])[:-1]

    def vjp(g):
        return np.split(g, bounds, axis=ax)

    return tensors[0].graph.record("concat", tuple(tensors), np.concatenate(arrays, axis=ax), vjp)


def relu(x: Tensor) -> Tensor:
    X = x.data
    Y = np.maximum(X, 0)
    return x.graph.record("relu", (x,), Y, lambda g: (np.where(Y > 0, g, 0),))


def sigmoid(x: Tensor) -> Tensor:
    X = x.data
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(X))
    y = np.where(X >= 0, 1 / (1 + e), e / (1 + e)).astype(X.dtype, copy=False)
    return x.graph.record("sigmoid", (x,), y, lambda g: (g * y * (1 - y),))


def scale(x: Tensor, s) -> Tensor:
    """Multiply by a constant scalar, or by a tensor vector along the trailing axis."""
    X = x.data
    if not isinstance(s, Tensor):
        c = float(s)
        return x.graph.record("scale", (x,), X * c, lambda g: (g * c,))
    S = s.data
    if S.ndim != 1 or X.shape[-1] != S.shape[0]:
        raise _shape_error("scale", X.shape, S.shape)
    need_s = _wants(s)

    def vjp(g):
        gs = (g * X).reshape(-1, S.shape[0]).sum(axis=0) if need_s else None
        return g * S, gs

    return x.graph.record("scale", (x, s), X * S, vjp)


def max_reduce(x: Tensor, axis: int) -> Tensor:
    """Max along ``axis``; argmax indices (first occurrence) kept for the backward pass."""
    X = x.data
    ax = axis % X.ndim
    idx = np.argmax(X, axis=ax)
    vals = np.take_along_axis(X, np.expand_dims(idx, ax), axis=ax).squeeze(ax)

    def vjp(g):
        out = np.zeros_like(X)
        np.put_along_axis(out, np.expand_dims(idx, ax), np.expand_dims(g, ax), axis=ax)
        return (out,)

    return x.graph.record("max_reduce_with_index", (x,), vals, vjp, indices=idx, axis=ax)


def segment_max(x: Tensor, starts: np.ndarray) -> Tensor:
    """Max over consecutive row segments of a 2-D ``x``; segment ``j`` begins at ``starts[j]``."""
    X = x.data
    starts = np.asarray(starts, dtype=np.intp)
    if X.ndim != 2 or starts.ndim != 1 or len(starts) == 0 or starts[0] != 0 \
            or np.any(np.diff(starts) <= 0) or starts[-1] >= X.shape[0]:
        raise _shape_error("segment_max", X.shape, starts.shape, "bad segment starts")
    vals = np.maximum.reduceat(X, starts, axis=0)
    seg = np.repeat(np.arange(len(starts)), np.diff(np.append(starts, X.shape[0])))
    rows = np.where(X == vals[seg], np.arange(X.shape[0])[:, None], X.shape[0])
    idx = np.minimum.reduceat(rows, starts, axis=0)
    cols = np.arange(X.shape[1])

    def vjp(g):
        out = np.zeros_like(X)
        out[idx, cols] = g
        return (out,)

    return x.graph.record("max_reduce_with_index", (x,), vals, vjp, indices=idx, axis=0)


def argmax_of(t: Tensor) -> np.ndarray:
    """Indices stored by a :func:`max_reduce` node."""
    return t.graph.nodes[t.node].extra["indices"]


def mean_reduce(x: Tensor, axis: int) -> Tensor:
    X = x.data
    ax = axis % X.ndim
    n = X.shape[ax]

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, ax) / n, X.shape).copy(),)

    return x.graph.record("mean", (x,), X.mean(axis=ax), vjp)


def sum_all(x: Tensor) -> Tensor:
    X = x.data
    return x.graph.record("sum", (x,), np.asarray(X.sum()), lambda g: (np.full_like(X, g),))


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """``x[index]`` for a 2-D ``x``; ``index`` may have any shape."""
    X = x.data
    index = np.asarray(index)
    if X.ndim != 2:
        raise _shape_error("gather_rows", X.shape, index.shape, "source must be 2-D")
    if index.size and (index.min() < 0 or index.max() >= X.shape[0]):
        raise _shape_error("gather_rows", X.shape, index.shape, "index out of range")
    flat = index.ravel()

    def vjp(g):
        out = np.zeros_like(X)
        np.add.at(out, flat, g.reshape(flat.size, X.shape[1]))
        return (out,)

    return x.graph.record("gather", (x,), X[index], vjp)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    X = x.data
    if not 0 <= start < stop <= X.shape[0]:
        raise _shape_error("slice_rows", X.shape, (start, stop), "bad row range")

    def vjp(g):
        out = np.zeros_like(X)
        out[start:stop] = g
        return (out,)

    return x.graph.record("slice", (x,), X[start:stop], vjp)


def reshape(x: Tensor, shape) -> Tensor:
    X = x.data
    try:
        Y = X.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", X.shape, shape) from None
    return x.graph.record("reshape", (x,), Y, lambda g: (g.reshape(X.shape),))


def softmax_cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Cross-entropy of softmax(logits) against an integer class label."""
    Z = logits.data
    if Z.ndim != 1 or not 0 <= label < Z.shape[0]:
        raise _shape_error("softmax_cross_entropy", Z.shape, (label,), "need 1-D logits and a valid label")
    shifted = Z - Z.max()
    lse = np.log(np.exp(shifted).sum())
    loss = lse - shifted[label]
    p = np.exp(shifted - lse)

    def vjp(g):
        d = p.copy()
        d[label] -= 1
        return (g * d,)

    return logits.graph.record("softmax_cross_entropy", (logits,), np.asarray(loss, dtype=Z.dtype), vjp)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    passed: bool
    worst_error: float
    worst_param: str | None
    worst_index: tuple | None
    checked: int

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return (f"gradcheck {status}: worst relative error {self.worst_error:.3e} "
                f"at {self.worst_param}{list(self.worst_index or ())} over {self.checked} scalars")


def grad_check(build: Callable[[Mapping[str, Tensor]], Tensor],
               params: Mapping[str, np.ndarray],
               tolerance: float = 1e-5, step: float = 1e-6,
               max_scalars: int = 10_000) -> GradCheckReport:
    """Compare backward gradients with central finite differences.

    ``build`` receives a mapping of parameter tensors attached to a fresh graph
    and returns the scalar loss. The relative error of each element is
    ``|a - n| / max(1, |a|, |n|)``.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    total = sum(v.size for v in params.values())
    if total > max_scalars:
        raise ValueError(f"grad_check: {total} scalars exceeds limit {max_scalars}")

    g = Graph()
    leaves = {k: g.leaf(v, requires_grad=True, name=k) for k, v in params.items()}
    loss = build(leaves)
    grads = g.backward(loss)
    analytic = {k: grads.get(t.node, np.zeros_like(params[k])) for k, t in leaves.items()}

    def evaluate():
        h = Graph()
        return float(build({k: h.leaf(v) for k, v in params.items()}).data)

    worst, where = 0.0, (None, None)
    for name, arr in params.items():
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            up = evaluate()
            arr[idx] = orig - step
            down = evaluate()
            arr[idx] = orig
            numeric = (up - down) / (2 * step)
            a = float(analytic[name][idx])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > worst:
                worst, where = err, (name, idx)
    return GradCheckReport(worst <= tolerance, worst, where[0], where[1], total)
