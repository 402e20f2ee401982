import numpy as np
import psutil
import pytest

from seqpointnet import runtime
from seqpointnet.model import init_params, predict
from seqpointnet.runtime import (ExecutionPlan, FrameError, FrameRuntime, bench, checksum,
                                 infer_sequence)


@pytest.fixture(scope="module")
def tiny_batch(tiny_cfg):
    r = np.random.default_rng(21)
    return [r.uniform(-1, 1, (tiny_cfg.frames, tiny_cfg.num_points, 3)) for _ in range(4)]


@pytest.fixture(scope="module")
def tiny_params(tiny_cfg):
    return init_params(tiny_cfg, seed=4, bias_scale=0.1)


@pytest.mark.parametrize("backend", ["process", "thread"])
def test_logits_identical_across_worker_counts(tiny_cfg, tiny_params, tiny_batch, backend):
    results = []
    for w in (1, 2, 4, 8):
        with FrameRuntime(tiny_params, tiny_cfg, ExecutionPlan(w, backend)) as rt:
            results.append(rt.infer(tiny_batch))
    for other in results[1:]:
        assert np.array_equal(results[0], other)


def test_runtime_matches_serial_reference(tiny_cfg, tiny_params, tiny_batch):
    ref = np.stack([predict(s, tiny_params, tiny_cfg) for s in tiny_batch])
    got = np.stack([infer_sequence(s, tiny_params, tiny_cfg) for s in tiny_batch])
    assert np.array_equal(ref, got)


def test_single_precision_close_to_double(tiny_cfg, tiny_params, tiny_batch):
    a = infer_sequence(tiny_batch[0], tiny_params, tiny_cfg)
    b = infer_sequence(tiny_batch[0], tiny_params, tiny_cfg, ExecutionPlan(precision="float32"))
    assert b.dtype == np.float32
    assert np.max(np.abs(a - b)) <= 1e-4 * max(1.0, np.max(np.abs(a)))


def test_bad_frame_is_named(tiny_cfg, tiny_params):
    seq = np.random.default_rng(0).uniform(-1, 1, (5, tiny_cfg.num_points, 3))
    seq[3, 2, 0] = np.inf
    with pytest.raises(FrameError) as err:
        infer_sequence(seq, tiny_params, tiny_cfg.replace(frames=5))
    assert err.value.frame == 3 and "frame 3" in str(err.value)


def test_failing_unit_is_named(tiny_cfg, tiny_params, monkeypatch):
    real = runtime.front_row

    def flaky(points, t, params, cfg):
        if t == 3:
            raise RuntimeError("boom")
        return real(points, t, params, cfg)

    monkeypatch.setattr(runtime, "front_row", flaky)
    seq = np.random.default_rng(0).uniform(-1, 1, (5, tiny_cfg.num_points, 3))
    with FrameRuntime(tiny_params, tiny_cfg.replace(frames=5), ExecutionPlan(2, "thread")) as rt:
        with pytest.raises(FrameError) as err:
            rt.infer([seq])
    assert err.value.frame == 3 and err.value.sequence == 0


def test_mixed_frame_counts_rejected(tiny_cfg, tiny_params, tiny_batch):
    with FrameRuntime(tiny_params, tiny_cfg) as rt:
        with pytest.raises(ValueError):
            rt.front([tiny_batch[0], tiny_batch[1][:2]])


def test_plan_validation():
    with pytest.raises(ValueError):
        ExecutionPlan(0)
    with pytest.raises(ValueError):
        ExecutionPlan(2, "gpu")


def test_bench_report(tiny_cfg, tiny_params, tiny_batch):
    report = bench(tiny_batch, tiny_params, tiny_cfg, workers=(1, 2, 4), repetitions=2)
    assert [r.workers for r in report.rows] == [1, 2, 4]
    assert report.row(1).speedup == 1.0
    assert len({r.checksum for r in report.rows}) == 1
    lines = report.to_text().splitlines()
    assert len(lines) == 3
    assert lines[0].split("\t")[0] == "workers=1"
    assert [f.split("=")[0] for f in lines[1].split("\t")] == [
        "workers", "median_front_ms", "median_back_ms", "speedup", "checksum"]


def test_bench_requires_warmup(tiny_cfg, tiny_params, tiny_batch):
    with pytest.raises(ValueError):
        bench(tiny_batch, tiny_params, tiny_cfg, warmup=2)


def test_checksum_sensitive_to_last_bit():
    a = np.array([1.0, 2.0])
    b = a.copy()
    b[1] = np.nextafter(b[1], 3.0)
    assert checksum(a) != checksum(b) and checksum(a) == checksum(a.copy())


def test_front_dominates_default_sequence(default_cfg, default_params, synth_small):
    cfg = default_cfg.replace(num_classes=4)
    params = init_params(cfg, seed=1)
    report = bench([synth_small[0].frames], params, cfg, workers=(1,), repetitions=1)
    assert report.front_share_w1 > 0.9


@pytest.mark.skipif((psutil.cpu_count(logical=False) or 1) < 4,
                    reason="front-part speedup needs at least 4 physical cores")
def test_four_workers_halve_front_time(default_cfg, synth_small):
    cfg = default_cfg.replace(num_classes=4)
    params = init_params(cfg, seed=1)
    seqs = [synth_small[i % len(synth_small)].frames for i in range(16)]
    report = bench(seqs, params, cfg, workers=(1, 4), repetitions=5)
    assert report.row(4).speedup >= 2.0
