"""Named parameter tensors, Adam with step decay, and the SPNC checkpoint format."""

from __future__ import annotations

import math
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .autodiff import Graph, ShapeError, Tensor

MAGIC = b"SPNC"
VERSION = 1


class ParameterStore:
    """Ordered mapping of parameter name to array.

    Mutated in place by :func:`adam_step`. :meth:`snapshot` returns a frozen
    copy that inference workers can share without locking.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray] | None = None, frozen=False):
        self._arrays: OrderedDict[str, np.ndarray] = OrderedDict()
        self.frozen = frozen
        for name, arr in (arrays or {}).items():
            self._arrays[name] = arr

    def add(self, name: str, array: np.ndarray):
        if self.frozen:
            raise RuntimeError("parameter snapshot is read-only")
        if name in self._arrays:
            raise KeyError(f"duplicate parameter {name!r}")
        self._arrays[name] = array

    def __getitem__(self, name):
        return self._arrays[name]

    def __contains__(self, name):
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def keys(self):
        return self._arrays.keys()

    def count(self) -> int:
        """Total number of trainable scalars."""
        return int(sum(a.size for a in self._arrays.values()))

    @property
    def dtype(self):
        return next(iter(self._arrays.values())).dtype

    def astype(self, dtype) -> "ParameterStore":
        return ParameterStore({k: v.astype(dtype) for k, v in self._arrays.items()})

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: v.copy() for k, v in self._arrays.items()})

    def snapshot(self) -> "ParameterStore":
        arrays = {}
        for k, v in self._arrays.items():
            c = v.copy()
            c.flags.writeable = False
            arrays[k] = c
        return ParameterStore(arrays, frozen=True)

    def attach(self, graph: Graph, requires_grad=False) -> dict[str, Tensor]:
        """Expose every parameter as a leaf of ``graph``."""
        return {k: graph.leaf(v, requires_grad=requires_grad, name=k)
                for k, v in self._arrays.items()}


@dataclass
class AdamState:
    lr: float = 1e-3
    decay: float = 0.5
    period: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay ** (epoch // self.period)


def adam_step(params: ParameterStore, grads: Mapping[str, np.ndarray],
              state: AdamState, epoch: int = 0):
    """One bias-corrected Adam update, in place."""
    if params.frozen:
        raise RuntimeError("cannot update a parameter snapshot")
    for name in grads:
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if grads[name].shape != params[name].shape:
            raise ShapeError(f"adam_step: {name}: {grads[name].shape} vs {params[name].shape}")
    state.step += 1
    lr = state.lr_at(epoch)
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)


def save_checkpoint(path, params: Mapping[str, np.ndarray] | ParameterStore):
    out = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path, dtype=np.float32) -> ParameterStore:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not an SPNC checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    store = ParameterStore()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        n = math.prod(dims)
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(dims)
        pos += 4 * n
        store.add(name, arr.astype(dtype))
    if pos != len(buf):
        raise ValueError(f"{path}: {len(buf) - pos} trailing bytes")
    return store
