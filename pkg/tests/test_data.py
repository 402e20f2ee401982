import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqpointnet.config import ModelConfig, RunConfig
from seqpointnet.data import (Augmentation, DepthFrame, SequenceRecord, augment,
                              centroid_trajectory_baseline, convert_depth_video, depth_to_points,
                              dropout_points, read_dataset, read_pgm, read_sequence,
                              synth_dataset, synth_sequence, temporal_indices, write_dataset,
                              write_pgm, write_sequence)

K = dict(fx=500.0, fy=500.0, cx=3.0, cy=2.0)


def test_principal_point_back_projects_to_axis():
    depth = np.zeros((5, 7), np.uint16)
    depth[2, 3] = 1000
    assert depth_to_points(DepthFrame(depth, **K)).tolist() == [[0.0, 0.0, 1.0]]


def test_only_nonzero_pixels_survive(rng):
    depth = np.zeros((40, 30), np.uint16)
    depth[17, 4] = 1234
    assert depth_to_points(DepthFrame(depth, **K)).shape == (1, 3)


def test_constant_depth_is_coplanar():
    depth = np.full((48, 64), 1500, np.uint16)
    pts = depth_to_points(DepthFrame(depth, fx=365.0, fy=365.0, cx=31.5, cy=23.5))
    centred = pts - pts.mean(axis=0)
    normal = np.linalg.svd(centred)[2][-1]
    assert np.max(np.abs(centred @ normal)) <= 1e-9


def test_depth_errors():
    with pytest.raises(ValueError):
        depth_to_points(DepthFrame(np.zeros((4, 4), np.uint16), **K))
    with pytest.raises(ValueError):
        depth_to_points(DepthFrame(np.ones((4, 4), np.uint16), 0.0, 1.0, 0.0, 0.0))


def test_pgm_round_trip(tmp_path, rng):
    depth = rng.integers(0, 65536, (6, 9)).astype(np.uint16)
    write_pgm(tmp_path / "d.pgm", depth)
    raw = (tmp_path / "d.pgm").read_bytes()
    assert raw.startswith(b"P5\n9 6\n65535\n")
    assert np.array_equal(read_pgm(tmp_path / "d.pgm"), depth)


def test_pgm_with_comment(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# kinect\n2 1\n65535\n" + struct.pack(">HH", 7, 300))
    assert read_pgm(tmp_path / "c.pgm").tolist() == [[7, 300]]


def test_temporal_indices():
    assert temporal_indices(40, 4).tolist() == [0, 10, 20, 30]
    assert temporal_indices(2, 4).tolist() == [0, 0, 1, 1]


def test_convert_depth_video(rng):
    maps = []
    for t in range(6):
        d = np.zeros((32, 32), np.uint16)
        d[8:24, 4 + t:20 + t] = 1000 + 20 * t
        maps.append(d)
    seq = convert_depth_video(maps, (300.0, 300.0, 16.0, 16.0), 4, rng, num_points=64)
    assert seq.shape == (4, 64, 3)
    assert np.max(np.abs(seq)) <= 1.0 + 1e-12


def test_synth_is_reproducible():
    a, b = synth_dataset(2, seed=5), synth_dataset(2, seed=5)
    assert all(np.array_equal(x.frames, y.frames) and x.label == y.label for x, y in zip(a, b))
    assert [r.label for r in a] == [0, 0, 1, 1, 2, 2, 3, 3]
    assert not np.array_equal(a[0].frames, synth_dataset(2, seed=6)[0].frames)


def test_translate_x_moves_right():
    r = np.random.default_rng(0)
    for _ in range(20):
        seq = synth_sequence(0, r)
        c = seq.mean(axis=1)
        assert c[19, 0] - c[0, 0] > 0.5


def test_per_class_motion_definitions():
    r = np.random.default_rng(1)
    rot = synth_sequence(1, r)
    radius = np.linalg.norm(rot.mean(axis=1)[:, [0, 2]], axis=1)
    assert np.ptp(radius) < 0.05  # orbit keeps its distance from the y axis
    bob = synth_sequence(2, r).mean(axis=1)
    assert abs(bob[-1, 2] - bob[0, 2]) < 0.05 and np.ptp(bob[:, 2]) > 0.5
    grow = synth_sequence(3, r)
    spread = np.linalg.norm(grow - grow.mean(axis=1, keepdims=True), axis=2).mean(axis=1)
    assert spread[10] > 1.8 * spread[0] and abs(spread[-1] - spread[0]) < 0.2 * spread[0]


def test_synth_rejects_unknown_class():
    with pytest.raises(ValueError):
        synth_sequence(4, np.random.default_rng(0))


def test_centroid_baseline_separates_classes():
    train = synth_dataset(25, seed=0, normalize=False)
    test = synth_dataset(10, seed=1000, normalize=False, split="test")
    assert centroid_trajectory_baseline(train, test) == 1.0


def test_augmentation_disabled_is_identity(synth_small):
    frames = synth_small[0].frames
    assert augment(frames, np.random.default_rng(0), Augmentation(enabled=False)) is frames


def test_rotation_preserves_distances(synth_small):
    frames = synth_small[3].frames[:, :64]
    rot = augment(frames, np.random.default_rng(0),
                  Augmentation(jitter_sigma=0.0, dropout_max=0.0))
    assert not np.allclose(rot, frames)
    for t in range(len(frames)):
        d0 = np.linalg.norm(frames[t][:, None] - frames[t][None], axis=2)
        d1 = np.linalg.norm(rot[t][:, None] - rot[t][None], axis=2)
        assert np.max(np.abs(d0 - d1)) <= 1e-9


def test_jitter_is_clipped(synth_small):
    frames = synth_small[0].frames
    out = augment(frames, np.random.default_rng(0),
                  Augmentation(rotate_y_deg=0, rotate_x_deg=0, jitter_sigma=1.0, dropout_max=0))
    assert np.max(np.abs(out - frames)) <= 0.05 + 1e-12


def test_dropout_keeps_point_count(rng):
    frame = rng.normal(size=(512, 3))
    out = dropout_points(frame, 0.2, rng)
    assert out.shape == (512, 3)
    rows = {tuple(p) for p in frame}
    assert all(tuple(p) in rows for p in out)
    assert len({tuple(p) for p in out}) < 512


def test_sequence_file_layout(tmp_path):
    frames = np.arange(2 * 3 * 3, dtype=np.float32).reshape(2, 3, 3)
    write_sequence(tmp_path / "s.pcsq", frames, 7)
    raw = (tmp_path / "s.pcsq").read_bytes()
    assert raw[:20] == b"PCSQ" + struct.pack("<IIII", 1, 2, 3, 7)
    assert raw[20:] == struct.pack("<18f", *range(18))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 9), st.integers(0, 2**31))
def test_sequence_round_trip_is_bit_exact(tmp_path_factory, T, n, seed):
    frames = np.random.default_rng(seed).normal(size=(T, n, 3)).astype(np.float32)
    path = tmp_path_factory.mktemp("seq") / "x.pcsq"
    write_sequence(path, frames, 3)
    back, label = read_sequence(path)
    assert label == 3 and back.tobytes() == frames.tobytes()


def test_truncated_sequence_rejected(tmp_path):
    write_sequence(tmp_path / "s.pcsq", np.zeros((2, 3, 3)), 0)
    (tmp_path / "t.pcsq").write_bytes((tmp_path / "s.pcsq").read_bytes()[:-4])
    with pytest.raises(ValueError):
        read_sequence(tmp_path / "t.pcsq")


def test_dataset_directory_round_trip(tmp_path):
    recs = synth_dataset(1, seed=2, frames=3, points=16) + synth_dataset(
        1, seed=3, frames=3, points=16, split="test")
    write_dataset(tmp_path, recs)
    manifest = (tmp_path / "manifest.tsv").read_text().splitlines()
    assert manifest[0] == "filename\tlabel\tsplit" and len(manifest) == 9
    back = read_dataset(tmp_path)
    assert [r.label for r in back] == [r.label for r in recs]
    assert all(np.array_equal(a.frames.astype(np.float32), b.frames.astype(np.float32))
               for a, b in zip(recs, back))
    assert len(read_dataset(tmp_path, split="test")) == 4


def test_record_fields():
    r = SequenceRecord(np.zeros((1, 1, 3)), 2, "a")
    assert r.split == "train" and r.source == "a"


def test_run_config_round_trip(tmp_path):
    cfg = RunConfig(model=ModelConfig(num_classes=4, sa1_widths=(8, 8, 16), pyramid=False),
                    seed=9, epochs=3, lr=0.0005, augment=False, data_dir="d ir")
    cfg.save(tmp_path / "c.txt")
    assert RunConfig.load(tmp_path / "c.txt") == cfg
    assert "sa1_widths = 8,8,16" in cfg.to_text()


def test_run_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown key"):
        RunConfig.from_text("epochs = 3\nlearning_rate = 1\n")
    with pytest.raises(ValueError):
        RunConfig.from_text("pyramid = maybe\n")
