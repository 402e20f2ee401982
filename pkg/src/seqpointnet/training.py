"""Mini-batch Adam training with a frame-parallel front part."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .config import ModelConfig, RunConfig
from .data import Augmentation, SequenceRecord, augment
from .model import FrameTape, back_gradients
from .params import AdamState, ParameterStore, adam_step
from .runtime import ExecutionPlan, FrameRuntime

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    loss: float
    accuracy: float
    steps: int
    seconds: float
    eval_accuracy: float = float("nan")

    def log_line(self) -> str:
        return (f"{self.epoch}\t{self.lr:.6g}\t{self.loss:.6f}\t{self.accuracy:.4f}\t"
                f"{self.eval_accuracy:.4f}")


def sequence_gradients(frames, label, params: ParameterStore, cfg: ModelConfig, pool=None):
    """Loss, logits and parameter gradients for one sequence.

    Front units are recorded per frame (optionally on ``pool``), the back part
    is differentiated first, then each frame's tape is seeded with its row of
    the fused-sequence gradient. Frame contributions are summed in ascending
    ``t`` so the result does not depend on scheduling.
    """
    def tape(t):
        return FrameTape(frames[t], t, params, cfg)

    T = len(frames)
    tapes = list(pool.map(tape, range(T))) if pool else [tape(t) for t in range(T)]
    rows = np.stack([tp.row for tp in tapes])
    loss, logits, grads, row_grads = back_gradients(rows, label, params, cfg)
    if pool:
        per_frame = list(pool.map(lambda t: tapes[t].gradients(row_grads[t]), range(T)))
    else:
        per_frame = [tapes[t].gradients(row_grads[t]) for t in range(T)]
    for fg in per_frame:
        for k, v in fg.items():
            if k in grads:
                grads[k] += v
            else:
                grads[k] = v.copy()
    return loss, logits, grads


def train_epoch(records: Sequence[SequenceRecord], params: ParameterStore, state: AdamState,
                cfg: ModelConfig, epoch=0, batch_size=32, rng=None,
                aug: Augmentation = Augmentation(enabled=False), workers=1) -> EpochMetrics:
    if not records:
        raise TrainingError("empty training set")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    dtype = params.dtype
    order = rng.permutation(len(records))
    start = time.perf_counter()
    total_loss, hits, steps = 0.0, 0, 0
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        with threadpool_limits(1) if pool else nullcontext():
            for b, lo in enumerate(range(0, len(order), batch_size)):
                batch = order[lo:lo + batch_size]
                acc: dict[str, np.ndarray] = {}
                for i in batch:
                    rec = records[i]
                    frames = augment(rec.frames, rng, aug).astype(dtype, copy=False)
                    loss, logits, grads = sequence_gradients(frames, rec.label, params, cfg, pool)
                    if not math.isfinite(loss):
                        raise TrainingError(f"non-finite loss in batch {b} (epoch {epoch})")
                    total_loss += loss
                    hits += int(np.argmax(logits) == rec.label)
                    for k, v in grads.items():
                        if k in acc:
                            acc[k] += v
                        else:
                            acc[k] = v
                for v in acc.values():
                    v /= len(batch)
                adam_step(params, acc, state, epoch)
                steps += 1
    finally:
        if pool:
            pool.shutdown()
    n = len(records)
    return EpochMetrics(epoch, state.lr_at(epoch), total_loss / n, hits / n, steps,
                        time.perf_counter() - start)


def evaluate(records: Sequence[SequenceRecord], params: ParameterStore, cfg: ModelConfig,
             plan: ExecutionPlan = ExecutionPlan(), batch=16) -> float:
    """Top-1 accuracy through the inference runtime."""
    hits = 0
    with FrameRuntime(params, cfg, plan) as rt:
        for lo in range(0, len(records), batch):
            chunk = records[lo:lo + batch]
            logits = rt.infer([r.frames for r in chunk])
            hits += int(np.sum(np.argmax(logits, axis=1) == [r.label for r in chunk]))
    return hits / len(records)


def fit(train: Sequence[SequenceRecord], test: Sequence[SequenceRecord], params: ParameterStore,
        run: RunConfig, log_path=None) -> list[EpochMetrics]:
    """Train for ``run.epochs`` epochs, evaluating after each one.

    Writes one metrics line per epoch to ``log_path`` (epoch, lr, train_loss,
    train_acc, eval_acc). Stops early once ``run.target_accuracy`` (if > 0) is
    reached on ``test``.
    """
    cfg = run.model
    state = AdamState(lr=run.lr, decay=run.lr_decay, period=run.lr_period)
    rng = np.random.default_rng(run.seed)
    aug = Augmentation(run.augment, run.aug_rotate_y_deg, run.aug_rotate_x_deg,
                       run.aug_jitter_sigma, run.aug_jitter_clip, run.aug_dropout_max)
    plan = ExecutionPlan(run.workers, "thread", run.precision)
    history = []
    log_file = Path(log_path).open("w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(run.epochs):
            m = train_epoch(train, params, state, cfg, epoch, run.batch_size, rng, aug, run.workers)
            if test:
                m.eval_accuracy = evaluate(test, params, cfg, plan)
            history.append(m)
            log.info("epoch %d  lr %.2e  loss %.4f  train %.3f  eval %.3f  (%.1fs)",
                     epoch, m.lr, m.loss, m.accuracy, m.eval_accuracy, m.seconds)
            if log_file:
                log_file.write(m.log_line() + "\n")
                log_file.flush()
            if run.target_accuracy > 0 and m.eval_accuracy >= run.target_accuracy:
                break
    finally:
        if log_file:
            log_file.close()
    return history
