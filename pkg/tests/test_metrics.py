import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbitllp import data as D
from orbitllp import metrics as MT
from oracles import f1_oracle


def test_mae_examples():
    assert MT.mae_chip([0.2, 0.8], [0.2, 0.8]) == 0
    assert MT.mae_chip([1, 0, 0, 0, 0], [0, 1, 0, 0, 0]) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        MT.mae_chip([1, 0], [1, 0, 0])


def test_mae_reads_as_area_on_a_square_km_chip():
    # per-class fractions of a 1 km2 chip are km2, so the mean error is km2 too
    pred, truth = np.array([0.3, 0.5, 0.2]), np.array([0.38, 0.42, 0.2])
    area_err = np.abs(pred * 1.0 - truth * 1.0).mean()
    assert MT.mae_chip(pred, truth) == pytest.approx(area_err)


@settings(max_examples=50)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_mae_symmetry(n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    assert MT.mae_chip(a, b) == MT.mae_chip(b, a)


def test_upsample_block_replication():
    cells = np.arange(625).reshape(25, 25)
    up = MT.upsample_nn(cells, 4)
    assert up.shape == (100, 100)
    assert np.all(up[4:8, 8:12] == cells[1, 2])
    np.testing.assert_array_equal(MT.upsample_nn(np.full((50, 50), 7)), np.full((100, 100), 7))


def test_upsample_matches_index_oracle():
    cells = np.random.default_rng(0).uniform(size=(50, 50, 3))
    up = MT.upsample_nn(cells)
    oracle = np.empty((100, 100, 3))
    for i in range(100):
        for j in range(100):
            oracle[i, j] = cells[i // 2, j // 2]
    np.testing.assert_array_equal(up, oracle)


def test_upsample_rejects_bad_sizes():
    with pytest.raises(ValueError):
        MT.upsample_nn(np.zeros((30, 30)))


def test_argmax_tie_goes_to_lowest_class():
    assert MT.argmax_classes(np.array([[0.4, 0.4, 0.2]]))[0] == 0


def test_f1_perfect_and_disjoint():
    truth = np.random.default_rng(1).integers(0, 3, (100, 100))
    onehot = np.eye(3)[truth[::4, ::4]]
    _, macro = MT.f1_pixel(onehot, np.repeat(np.repeat(truth[::4, ::4], 4, 0), 4, 1), 3)
    assert macro == 1.0
    pred = np.zeros((25, 25, 2))
    pred[..., 0] = 1
    per_class, macro = MT.f1_pixel(pred, np.ones((100, 100), int), 2)
    assert macro == 0.0 and per_class.tolist() == [0.0, 0.0]


def test_f1_four_by_four_fixture():
    truth = np.array([[0, 0, 0, 0], [0, 0, 0, 0], [1, 1, 1, 1], [1, 1, 1, 1]])
    pred = np.array([[0, 0, 1, 1], [0, 0, 1, 1], [0, 0, 1, 1], [0, 0, 1, 1]])
    cm = MT.confusion(pred, truth, 2)
    np.testing.assert_array_equal(cm, [[4, 4], [4, 4]])
    assert np.trace(cm) == 8
    # each class: tp 4, fp 4, fn 4 -> precision = recall = 0.5
    per_class, macro = MT.f1_from_confusion(cm)
    np.testing.assert_allclose(per_class, [0.5, 0.5])
    assert macro == 0.5


def test_f1_absent_class_is_excluded():
    truth = np.zeros((100, 100), int)
    truth[:50] = 1
    pred = np.zeros((50, 50, 3))
    pred[:25, :, 1] = 1
    pred[25:, :, 0] = 1
    per_class, macro = MT.f1_pixel(pred, truth, 3)
    assert per_class.tolist() == [1.0, 1.0, 0.0]
    assert macro == 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5), st.sampled_from([25, 50]), st.integers(0, 2**32 - 1))
def test_f1_matches_oracle(n, side, seed):
    rng = np.random.default_rng(seed)
    cells = rng.uniform(size=(side, side, n))
    truth = rng.integers(0, n, (100, 100))
    per_class, macro = MT.f1_pixel(cells, truth, n)
    pred_labels = np.repeat(np.repeat(cells.argmax(-1), 100 // side, 0), 100 // side, 1)
    exp_per, exp_macro = f1_oracle(pred_labels, truth, n)
    np.testing.assert_allclose(per_class, exp_per, atol=1e-12)
    assert macro == pytest.approx(exp_macro, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_f1_joint_permutation_invariance(n, seed):
    rng = np.random.default_rng(seed)
    pred = rng.integers(0, n, (100, 100))
    truth = rng.integers(0, n, (100, 100))
    perm = rng.permutation(n)
    per_a, macro_a = MT.f1_from_confusion(MT.confusion(pred, truth, n))
    per_b, macro_b = MT.f1_from_confusion(MT.confusion(perm[pred], perm[truth], n))
    np.testing.assert_allclose(per_b[perm], per_a, atol=1e-12)
    assert macro_a == pytest.approx(macro_b)


def test_regression_to_mean_examples():
    t = np.array([0.1, 0.6, 0.3])
    np.testing.assert_allclose(MT.regression_to_mean([t, t, t]), t)
    assert MT.mae_chip(MT.regression_to_mean([t, t]), t) == pytest.approx(0)
    base = MT.regression_to_mean([[1, 0], [0, 1]])
    np.testing.assert_allclose(base, [0.5, 0.5])
    assert MT.mae_chip(base, [1, 0]) == MT.mae_chip(base, [0, 1]) == 0.5
    with pytest.raises(ValueError):
        MT.regression_to_mean(np.zeros((0, 3)))


def test_baseline_on_synthetic_test_split(world):
    D.assign_splits(world, 12)
    _, _, train_targets, _ = D.split_arrays(world, "train")
    test = world.select("test")
    base = MT.regression_to_mean(train_targets)
    direct = np.mean([np.mean(np.abs(base - D.chip_proportions(c.labels, 3))) for c in test])
    props = np.broadcast_to(base, (len(test), 3))
    cells = np.broadcast_to(base, (len(test), 25, 25, 3))
    report = MT.evaluate([c.id for c in test], props, cells, [c.labels for c in test], 3, base)
    assert report.baseline_mae == pytest.approx(direct, rel=1e-12)
    assert report.mean_mae == pytest.approx(direct, rel=1e-12)
    assert report.summary()["chips"] == len(test)
