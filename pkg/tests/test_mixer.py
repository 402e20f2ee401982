import math

import numpy as np
import pytest

import oracles
from seqpointnet.autodiff import Graph, ShapeError
from seqpointnet.config import ModelConfig
from seqpointnet.mixer import (classifier_head, count_parameters, displacement_table,
                               fuse_multilevel, pyramid_max_pool, pyramid_partitions,
                               space_dislocation_layer)
from seqpointnet.model import init_params, parameter_shapes


def test_displacement_origin_row():
    row = displacement_table(1, 8)[0]
    assert row[0::2].tolist() == [0.0] * 4 and row[1::2].tolist() == [1.0] * 4


def test_displacement_second_row():
    dv = displacement_table(2, 1024)
    assert dv[1, 0] == pytest.approx(0.841471, abs=1e-6)
    assert dv[1, 1] == pytest.approx(0.540302, abs=1e-6)


def test_displacement_rows_all_differ():
    dv = displacement_table(20, 1024)
    assert np.all(np.linalg.norm(np.diff(dv, axis=0), axis=1) > 0)


@pytest.mark.parametrize("T, d_h, origin", [(20, 1024, 0), (7, 32, 0), (5, 16, 1)])
def test_displacement_matches_direct_evaluation(T, d_h, origin):
    got = displacement_table(T, d_h, origin)
    assert np.max(np.abs(got - np.array(oracles.displacement(T, d_h, origin)))) <= 1e-12


def test_displacement_odd_width():
    with pytest.raises(ValueError):
        displacement_table(3, 5)


def _layer(x, dv, w, b, activation=True):
    g = Graph()
    return space_dislocation_layer(g.leaf(np.asarray(x, float)), g.leaf(np.asarray(dv, float)),
                                   g.leaf(np.asarray(w, float)), g.leaf(np.asarray(b, float)),
                                   activation).data


def test_dislocation_zero_weights(rng):
    out = _layer(rng.normal(size=(5, 6)), rng.normal(size=(5, 6)), np.zeros((6, 6)), np.zeros(6))
    assert not out.any()


def test_dislocation_identity_without_activation(rng):
    x, dv = rng.normal(size=(4, 6)), displacement_table(4, 6)
    assert np.array_equal(_layer(x, dv, np.eye(6), np.zeros(6), activation=False), x + dv)


def test_dislocation_hand_computed():
    x = [[1.0, -1.0, 0.5, 2.0], [0.0, 0.0, -3.0, 1.0]]
    dv = displacement_table(2, 4)
    w = [[1, 0, 0, 1], [0, 1, 0, 0], [0, 0, 2, 0], [0, 0, 0, -1]]
    b = [0.0, 0.0, 0.0, 0.5]
    s1, c1 = math.sin(1), math.cos(1)
    s2, c2 = math.sin(0.01), math.cos(0.01)
    expected = [
        [1.0, 0.0, 1.0, max(0.0, 1.0 - 3.0 + 0.5)],
        [s1, c1, max(0.0, 2 * (-3.0 + s2)), max(0.0, s1 - 1.0 - c2 + 0.5)],
    ]
    assert np.allclose(_layer(x, dv, w, b), expected, rtol=0, atol=1e-15)


def test_dislocation_shape_mismatch():
    with pytest.raises(ShapeError):
        _layer(np.zeros((3, 4)), np.zeros((2, 4)), np.eye(4), np.zeros(4))


def _fuse(levels):
    g = Graph()
    return fuse_multilevel([g.leaf(np.asarray(l, float)) for l in levels]).data


def test_fuse_examples(rng):
    a = rng.normal(size=(4, 3))
    assert np.array_equal(_fuse([a]), a)
    assert not _fuse([a, -a]).any()
    levels = rng.normal(size=(3, 4, 3))
    brute = [[levels[0][i][j] + levels[1][i][j] + levels[2][i][j] for j in range(3)] for i in range(4)]
    assert np.array_equal(_fuse(levels), np.array(brute))


def _pool(rows):
    return pyramid_max_pool(Graph().leaf(np.asarray(rows, float))).data


def test_pyramid_partitions():
    assert pyramid_partitions(20) == [(0, 20), (0, 10), (10, 20)]
    assert pyramid_partitions(5) == [(0, 5), (0, 3), (3, 5)]
    with pytest.raises(ValueError):
        pyramid_partitions(1)


def test_pyramid_constant_sequence():
    v = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(_pool(np.tile(v, (6, 1))), np.tile(v, 3))


def test_pyramid_half_structure(rng):
    x = rng.normal(size=(10, 4))
    base = _pool(x)
    shuffled = np.concatenate([x[:5][rng.permutation(5)], x[5:][rng.permutation(5)]])
    assert np.array_equal(_pool(shuffled), base)
    swapped = _pool(np.concatenate([x[5:], x[:5]]))
    assert np.array_equal(swapped[:4], base[:4])
    assert np.array_equal(swapped[4:8], base[8:])
    assert np.array_equal(swapped[8:], base[4:8])


def test_pyramid_matches_naive_scan():
    r = np.random.default_rng(8)
    for _ in range(200):
        x = r.normal(size=(int(r.integers(2, 25)), int(r.integers(1, 9))))
        assert _pool(x).tolist() == oracles.pyramid(x.tolist())


def test_head_zero_weights(rng):
    g = Graph()
    P = {"head.w0": g.leaf(np.zeros((12, 5))), "head.b0": g.leaf(np.zeros(5)),
         "head.w1": g.leaf(np.zeros((5, 7))), "head.b1": g.leaf(np.zeros(7))}
    logits = classifier_head(g.leaf(rng.normal(size=12)), P)
    assert logits.data.tolist() == [0.0] * 7


@pytest.mark.parametrize("classes", [60, 120, 20, 27, 4])
def test_head_width_and_count(classes):
    cfg = ModelConfig(num_classes=classes)
    shapes = parameter_shapes(cfg)
    assert shapes["head.w1"] == (256, classes)
    head = sum(math.prod(s) for k, s in shapes.items() if k.startswith("head."))
    assert head == 3072 * 256 + 256 + 256 * classes + classes


def test_head_count_for_sixty_classes():
    shapes = parameter_shapes(ModelConfig())
    head = sum(math.prod(s) for k, s in shapes.items() if k.startswith("head."))
    assert head == 786_688 + 15_420 == 802_108


def test_default_count_near_reported_size():
    total = count_parameters(ModelConfig())
    assert total == 3_706_236
    assert abs(total - 3_720_000) <= 0.05 * 3_720_000


def test_class_delta():
    assert count_parameters(ModelConfig(num_classes=120)) - count_parameters(ModelConfig()) == 257 * 60


@pytest.mark.parametrize("cfg", [
    ModelConfig(), ModelConfig(num_classes=4, pyramid=False),
    ModelConfig(sa1_attention=True, sa2_attention=False, dislocation_layers=3),
    ModelConfig(global_widths=(16, 16, 32), head_hidden=8, attention_reduction=4),
])
def test_count_matches_live_store(cfg):
    assert count_parameters(cfg) == oracles.count_live(init_params(cfg, seed=0))
