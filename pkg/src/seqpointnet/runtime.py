"""Frame-parallel inference and the benchmark harness.

The front part of the network (embedding plus dislocation layers) is a pure
function of one frame and the parameter snapshot, so each ``(sequence, frame)``
pair is an independent task. Results land in a preallocated slot indexed by
``(sequence, t)``; the back part runs serially once every slot is filled.
BLAS is pinned to one thread inside the runtime so that the per-task
arithmetic, and therefore the logits, do not depend on the worker count.
"""

from __future__ import annotations

import hashlib
import logging
import multiprocessing as mp
import os
import statistics
import time
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .config import ModelConfig
from .model import back_logits, front_row
from .params import ParameterStore

log = logging.getLogger(__name__)


class FrameError(RuntimeError):
    """A front-part unit failed; carries the frame (and sequence) index."""

    def __init__(self, frame: int, sequence: int, cause: BaseException):
        super().__init__(f"frame {frame} of sequence {sequence} failed: {cause}")
        self.frame = frame
        self.sequence = sequence


class DeterminismError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExecutionPlan:
    workers: int = 1
    backend: str = "process"  # "process" or "thread"; one worker always runs inline
    precision: str = "float64"

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.backend not in ("process", "thread"):
            raise ValueError(f"unknown backend {self.backend!r}")

    @property
    def dtype(self):
        return np.dtype(self.precision)


# worker-process state, set once by the pool initializer
_STATE: dict = {}


def _init_worker(params, cfg):
    threadpool_limits(1)
    _STATE["params"] = params
    _STATE["cfg"] = cfg


def _front_task(points, t):
    return front_row(points, t, _STATE["params"], _STATE["cfg"])


def _check_frame(points, cfg: ModelConfig):
    points = np.asarray(points)
    if points.shape != (cfg.num_points, 3):
        raise ValueError(f"expected ({cfg.num_points}, 3) points, got {points.shape}")
    if not np.isfinite(points).all():
        raise ValueError("non-finite coordinates")
    return points


class FrameRuntime:
    """Worker pool bound to one read-only parameter snapshot.

    Use as a context manager so the pool is started once and reused.
    """

    def __init__(self, params: ParameterStore, cfg: ModelConfig, plan: ExecutionPlan = ExecutionPlan()):
        self.plan = plan
        self.cfg = cfg
        self.params = params.astype(plan.dtype).snapshot()
        self._pool: Executor | None = None
        self._limits = None
        self.last_front_s = 0.0
        self.last_back_s = 0.0

    def __enter__(self):
        self._limits = threadpool_limits(1)
        if self.plan.workers > 1:
            if self.plan.backend == "process":
                ctx = mp.get_context("fork")
                self._pool = ProcessPoolExecutor(self.plan.workers, mp_context=ctx,
                                                 initializer=_init_worker,
                                                 initargs=(self.params, self.cfg))
            else:
                self._pool = ThreadPoolExecutor(self.plan.workers)
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None
        if self._limits is not None:
            self._limits.restore_original_limits()
            self._limits = None

    def front(self, sequences: Sequence[np.ndarray]) -> np.ndarray:
        """Fused hyperpoint rows ``(B, T, d_h)`` for a batch of sequences."""
        dtype = self.plan.dtype
        T = {len(s) for s in sequences}
        if len(T) != 1:
            raise ValueError(f"sequences in one batch must share a frame count, got {sorted(T)}")
        T = T.pop()
        slots = np.empty((len(sequences), T, self.cfg.d_h), dtype=dtype)
        tasks = []
        for i, seq in enumerate(sequences):
            for t in range(T):
                try:
                    pts = _check_frame(seq[t], self.cfg).astype(dtype, copy=False)
                except ValueError as e:
                    raise FrameError(t, i, e) from e
                tasks.append((i, t, pts))
        start = time.perf_counter()
        if self._pool is None:
            for i, t, pts in tasks:
                try:
                    slots[i, t] = front_row(pts, t, self.params, self.cfg)
                except Exception as e:
                    raise FrameError(t, i, e) from e
        else:
            fn = _front_task if self.plan.backend == "process" else self._thread_task
            futures = [(i, t, self._pool.submit(fn, pts, t)) for i, t, pts in tasks]
            for i, t, fut in futures:
                try:
                    slots[i, t] = fut.result()
                except Exception as e:
                    for _, _, f in futures:
                        f.cancel()
                    raise FrameError(t, i, e) from e
        self.last_front_s = time.perf_counter() - start
        return slots

    def _thread_task(self, points, t):
        return front_row(points, t, self.params, self.cfg)

    def back(self, rows: np.ndarray) -> np.ndarray:
        start = time.perf_counter()
        logits = np.stack([back_logits(r, self.params, self.cfg) for r in rows])
        self.last_back_s = time.perf_counter() - start
        return logits

    def infer(self, sequences: Sequence[np.ndarray]) -> np.ndarray:
        """Logits ``(B, num_classes)``."""
        return self.back(self.front(sequences))


def infer_sequence(sequence, params: ParameterStore, cfg: ModelConfig,
                   plan: ExecutionPlan = ExecutionPlan()) -> np.ndarray:
    with FrameRuntime(params, cfg, plan) as rt:
        return rt.infer([sequence])[0]


def checksum(logits: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(logits).tobytes()).hexdigest()[:16]


@dataclass
class BenchRow:
    workers: int
    median_front_ms: float
    median_back_ms: float
    median_total_ms: float
    speedup: float
    checksum: str

    def to_text(self) -> str:
        return (f"workers={self.workers}\tmedian_front_ms={self.median_front_ms:.3f}\t"
                f"median_back_ms={self.median_back_ms:.3f}\tspeedup={self.speedup:.3f}\t"
                f"checksum={self.checksum}")


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    sequences: int = 0
    repetitions: int = 0
    cpu_count: int | None = None

    def to_text(self) -> str:
        return "\n".join(r.to_text() for r in self.rows) + "\n"

    def row(self, workers: int) -> BenchRow:
        return next(r for r in self.rows if r.workers == workers)

    @property
    def front_share_w1(self) -> float:
        r = self.row(1)
        return r.median_front_ms / (r.median_front_ms + r.median_back_ms)


def bench(sequences: Sequence[np.ndarray], params: ParameterStore, cfg: ModelConfig,
          workers: Sequence[int] = (1, 2, 4), repetitions=5, warmup=3,
          backend="process", precision="float64") -> BenchReport:
    """Median per-phase wall clock for each worker count, after ``warmup`` untimed runs.

    Raises :class:`DeterminismError` if logits differ between worker counts.
    """
    if warmup < 3:
        raise ValueError("at least 3 warm-up iterations are required")
    report = BenchReport(sequences=len(sequences), repetitions=repetitions, cpu_count=os.cpu_count())
    for w in workers:
        plan = ExecutionPlan(w, backend, precision)
        fronts, backs, sums = [], [], set()
        with FrameRuntime(params, cfg, plan) as rt:
            for rep in range(warmup + repetitions):
                logits = rt.infer(sequences)
                sums.add(checksum(logits))
                if rep >= warmup:
                    fronts.append(rt.last_front_s * 1e3)
                    backs.append(rt.last_back_s * 1e3)
        if len(sums) != 1:
            raise DeterminismError(f"logits changed between repetitions with {w} workers")
        front, back = statistics.median(fronts), statistics.median(backs)
        report.rows.append(BenchRow(w, front, back, front + back, 1.0, sums.pop()))
        log.info(report.rows[-1].to_text())
    base = next((r for r in report.rows if r.workers == 1), report.rows[0])
    for r in report.rows:
        r.speedup = base.median_front_ms / r.median_front_ms
    if len({r.checksum for r in report.rows}) != 1:
        raise DeterminismError("logit checksums differ across worker counts: "
                               + ", ".join(f"W={r.workers}:{r.checksum}" for r in report.rows))
    return report
