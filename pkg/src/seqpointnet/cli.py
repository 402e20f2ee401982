"""Command-line interface: ``seqpointnet {synth,convert,train,eval,bench,gradcheck}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .autodiff import grad_check
from .config import RunConfig, tiny_config
from .data import (SequenceRecord, convert_depth_video, read_dataset, read_pgm, synth_dataset,
                   write_dataset)
from .model import init_params, sequence_loss
from .params import load_checkpoint, save_checkpoint
from .runtime import ExecutionPlan, bench
from .training import evaluate, fit

log = logging.getLogger("seqpointnet")

CHECKPOINT = "model.spnc"
CONFIG = "config.txt"
METRICS = "metrics.tsv"


def _workers(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("worker counts must be positive")
    return values


def _run_config(args) -> RunConfig:
    if args.config:
        run = RunConfig.load(args.config)
    elif getattr(args, "checkpoint", None) and (Path(args.checkpoint).parent / CONFIG).exists():
        run = RunConfig.load(Path(args.checkpoint).parent / CONFIG)
    else:
        run = RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = max(args.workers)
    for key in ("data_dir", "out_dir", "epochs", "batch_size", "target_accuracy", "precision"):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    return RunConfig(**{**run.__dict__, **changes})


def _params(run: RunConfig, checkpoint):
    dtype = np.dtype(run.precision)
    if checkpoint:
        params = load_checkpoint(checkpoint, dtype)
        expected = init_params(run.model, 0, dtype)
        for k in expected:
            if k not in params or params[k].shape != expected[k].shape:
                raise SystemExit(f"checkpoint {checkpoint} does not match the configured model ({k})")
        return params
    log.info("no checkpoint given: using randomly initialised weights (seed %d)", run.seed)
    return init_params(run.model, run.seed, dtype)


def cmd_synth(args) -> int:
    run = _run_config(args)
    out = Path(args.out or run.data_dir)
    train = synth_dataset(args.train_per_class, run.seed, run.model.frames, run.model.num_points,
                          classes=run.model.num_classes)
    test = synth_dataset(args.test_per_class, run.seed + 1000, run.model.frames,
                         run.model.num_points, split="test", classes=run.model.num_classes)
    write_dataset(out, train + test)
    print(f"wrote {len(train)} train and {len(test)} test sequences to {out}")
    return 0


def cmd_convert(args) -> int:
    """Each line of ``labels.tsv`` names a directory of PGM depth frames, its label and split."""
    run = _run_config(args)
    src = Path(args.input)
    rng = np.random.default_rng(run.seed)
    records = []
    for line in (src / "labels.tsv").read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, label, *rest = line.split("\t")
        frames = [read_pgm(p) for p in sorted((src / name).glob("*.pgm"))]
        if not frames:
            raise SystemExit(f"{src / name}: no .pgm frames")
        seq = convert_depth_video(frames, args.intrinsics, run.model.frames, rng,
                                  run.model.num_points)
        records.append(SequenceRecord(seq, int(label), name, rest[0] if rest else "train"))
    write_dataset(args.out, records)
    print(f"converted {len(records)} sequences into {args.out}")
    return 0


def cmd_train(args) -> int:
    run = _run_config(args)
    dtype = np.dtype(run.precision)
    train = read_dataset(run.data_dir, "train", dtype)
    test = read_dataset(run.data_dir, "test", dtype)
    if not train:
        raise SystemExit(f"{run.data_dir}: no training sequences")
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run.save(out / CONFIG)
    params = init_params(run.model, run.seed, dtype)
    history = fit(train, test, params, run, out / METRICS)
    save_checkpoint(out / CHECKPOINT, params)
    last = history[-1]
    print(f"epochs={len(history)}\ttrain_loss={last.loss:.4f}\teval_acc={last.eval_accuracy:.4f}")
    return 0


def cmd_eval(args) -> int:
    run = _run_config(args)
    records = read_dataset(run.data_dir, args.split, np.dtype(run.precision))
    if not records:
        raise SystemExit(f"{run.data_dir}: no sequences in split {args.split!r}")
    params = _params(run, args.checkpoint)
    acc = evaluate(records, params, run.model, ExecutionPlan(run.workers, precision=run.precision))
    print(f"accuracy={acc:.4f}\tsequences={len(records)}")
    return 0


def cmd_bench(args) -> int:
    run = _run_config(args)
    params = _params(run, args.checkpoint)
    if args.data:
        seqs = [r.frames for r in read_dataset(args.data)][:args.sequences]
    else:
        per_class = -(-args.sequences // run.model.num_classes)
        seqs = [r.frames for r in synth_dataset(per_class, run.seed, run.model.frames,
                                                run.model.num_points,
                                                classes=run.model.num_classes)][:args.sequences]
    report = bench(seqs, params, run.model, args.workers or [1], args.repetitions, args.warmup,
                   args.backend, run.precision)
    sys.stdout.write(report.to_text())
    return 0


def cmd_gradcheck(args) -> int:
    cfg = tiny_config()
    seed = args.seed if args.seed is not None else 0
    params = init_params(cfg, seed, bias_scale=0.1)
    frames = np.random.default_rng(seed).uniform(-1, 1, (cfg.frames, cfg.num_points, 3))
    report = grad_check(lambda P: sequence_loss(frames, seed % cfg.num_classes, P, cfg),
                        dict(params.items()), tolerance=args.tolerance)
    status = "PASS" if report.passed else "FAIL"
    print(f"{status}\tworst_error={report.worst_error:.3e}\tparam={report.worst_param}"
          f"\tchecked={report.checked}")
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="random seed (overrides the config file)")
    common.add_argument("--config", help="run config file (flat key = value)")
    common.add_argument("--workers", type=_workers,
                        help="worker count; bench accepts a comma-separated list")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="seqpointnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write the synthetic motion dataset")
    s.add_argument("--out")
    s.add_argument("--train-per-class", type=int, default=25)
    s.add_argument("--test-per-class", type=int, default=10)
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("convert", parents=[common], help="depth-map directories to sequence files")
    c.add_argument("--input", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--intrinsics", type=float, nargs=4, metavar=("FX", "FY", "CX", "CY"),
                   default=(365.0, 365.0, 256.0, 212.0))
    c.set_defaults(func=cmd_convert)

    t = sub.add_parser("train", parents=[common], help="train and write checkpoint + metrics")
    t.add_argument("--data", dest="data_dir")
    t.add_argument("--out", dest="out_dir")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--target-accuracy", type=float)
    t.add_argument("--precision", choices=("float32", "float64"))
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="top-1 accuracy of a checkpoint")
    e.add_argument("--data", dest="data_dir")
    e.add_argument("--checkpoint")
    e.add_argument("--split", default="test")
    e.add_argument("--precision", choices=("float32", "float64"))
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", parents=[common], help="front/back timing per worker count")
    b.add_argument("--checkpoint")
    b.add_argument("--data")
    b.add_argument("--sequences", type=int, default=16)
    b.add_argument("--repetitions", type=int, default=5)
    b.add_argument("--warmup", type=int, default=3)
    b.add_argument("--backend", choices=("process", "thread"), default="process")
    b.add_argument("--precision", choices=("float32", "float64"), default="float64")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference check on a tiny model")
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.workers is not None and len(args.workers) > 1 and args.command != "bench":
        build_parser().error("only bench accepts a list of worker counts")
    try:
        return args.func(args)
    except (OSError, ValueError) as e:
        print(f"seqpointnet {args.command}: {e}", file=sys.stderr)
        return 1
