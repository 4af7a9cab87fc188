import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcforest.data import Dataset
from mcforest.errors import NoSupportError
from mcforest.forest import (BASIC, BASIC_ONESAM, ForestConfig, RegressionConfig, WeightVector,
                             default_tuning_grid, iate_weights, predict_iate, regression_forest,
                             train_forest, tune_oob, weight_block)
from mcforest.splitting import ONEF, ONEF_MCE, ONEF_VART
from mcforest.tree import TreeConfig, populate_honest

from conftest import small_config, synth


def stump_config(estimator=ONEF, **kw):
    return ForestConfig(estimator=estimator, n_trees=1, subsample_ratio=1.0,
                        tree=TreeConfig(min_leaf=10**6), **kw)


def test_stump_iate_is_mean_difference(data2):
    f = train_forest(data2, stump_config())
    b1, b0 = f.y_b[f.d_b == 1], f.y_b[f.d_b == 0]
    assert predict_iate(f, data2.x[0], (1, 0)) == pytest.approx(b1.mean() - b0.mean(), abs=1e-12)
    w = iate_weights(f, data2.x[0], (1, 0)).dense()
    np.testing.assert_allclose(w[f.d_b == 1], 1 / b1.size)
    np.testing.assert_allclose(w[f.d_b == 0], -1 / b0.size)


def test_basic_stumps_are_mean_difference(data2):
    f = train_forest(data2, stump_config(BASIC))
    b1, b0 = f.y_b[f.d_b == 1], f.y_b[f.d_b == 0]
    assert predict_iate(f, data2.x[:3], (1, 0)) == pytest.approx(b1.mean() - b0.mean())


def test_hand_stump_weights():
    # one stump, sample B: treated rows j1, j2 with y 2, 4 and a control row with y 1
    x = np.zeros((6, 1))
    x[:, 0] = [0, 1, 2, 3, 4, 5]
    ds = Dataset.from_arrays(x, [1, 1, 0, 1, 0, 0], [2.0, 4.0, 1.0, 9.0, 9.0, 9.0])
    f = train_forest(ds, stump_config())
    w = iate_weights(f, [0.0], (1, 0))
    dense = w.dense()
    members = {int(j): v for j, v in zip(w.indices, w.values)}
    assert sorted(members.values()) == sorted([-1.0 / (f.d_b == 0).sum()] * (f.d_b == 0).sum()
                                             + [1.0 / (f.d_b == 1).sum()] * (f.d_b == 1).sum())
    assert dense @ f.y_b == pytest.approx(predict_iate(f, [0.0], (1, 0)))


def test_two_stumps_average():
    rng = np.random.default_rng(0)
    ds = Dataset.from_arrays(rng.normal(size=(40, 1)), np.arange(40) % 2, rng.normal(size=40))
    cfg = dataclasses.replace(stump_config(), n_trees=2, subsample_ratio=0.5)
    f = train_forest(ds, cfg)
    w = iate_weights(f, [0.0], (1, 0)).dense()
    # both stumps see all of sample B, so the average equals either tree's vector
    one = train_forest(ds, stump_config())
    np.testing.assert_allclose(w, iate_weights(one, [0.0], (1, 0)).dense(), atol=1e-15)


@pytest.mark.parametrize("estimator", [ONEF, ONEF_MCE, ONEF_VART, BASIC, BASIC_ONESAM])
def test_weight_invariants(data3, estimator):
    f = train_forest(data3, small_config(estimator=estimator, n_trees=30))
    x = data3.x[:40]
    for c in [(1, 0), (2, 0), (2, 1)]:
        w, used, total = weight_block(f, x, c)
        pos = np.where(np.isin(f.d_b, [c[0]]), w, 0).sum(axis=1)
        neg = np.where(np.isin(f.d_b, [c[1]]), w, 0).sum(axis=1)
        np.testing.assert_allclose(pos, 1.0, atol=1e-10)
        np.testing.assert_allclose(neg, -1.0, atol=1e-10)
        other = ~np.isin(f.d_b, c)
        assert np.all(w[:, other] == 0)
        np.testing.assert_allclose(predict_iate(f, x, c), w @ f.y_b, atol=1e-10)
        assert np.all(used <= total)


def test_location_and_scale_equivariance(data2):
    cfg = small_config(estimator=ONEF, n_trees=20)
    f = train_forest(data2, cfg)
    x = data2.x[:30]
    base = predict_iate(f, x, (1, 0))
    w = weight_block(f, x, (1, 0))[0]
    np.testing.assert_allclose(w @ (f.y_b + 5.0), base, atol=1e-10)
    np.testing.assert_allclose(w @ (3.0 * f.y_b), 3.0 * base, atol=1e-10)


def test_same_seed_same_predictions(data2):
    cfg = small_config(estimator=ONEF_MCE, penalty=True, seed=4)
    a = predict_iate(train_forest(data2, cfg), data2.x[:20], (1, 0))
    b = predict_iate(train_forest(data2, cfg), data2.x[:20], (1, 0))
    np.testing.assert_array_equal(a, b)


def test_mce_equals_onef_when_products_vanish():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(200, 3))
    d = np.arange(200) % 2
    # outcomes constant within each arm: every residual and matched residual is zero
    ds = Dataset.from_arrays(x, d, 3.0 * d)
    fa = train_forest(ds, small_config(estimator=ONEF, n_trees=5, seed=1))
    fb = train_forest(ds, small_config(estimator=ONEF_MCE, n_trees=5, seed=1))
    for ta, tb in zip(fa.trees(), fb.trees()):
        assert ta.same_structure(tb)


def test_no_support_error():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(400, 1))
    ds = Dataset.from_arrays(x, np.arange(400) % 2, 10.0 * (x[:, 0] > 0))
    f = train_forest(ds, small_config(estimator=ONEF, n_trees=10, min_leaf=40))
    # repopulate with a sample B whose controls all sit below every split point
    d_b = (f.x_b[:, 0] > -0.1).astype(np.int64)
    groups = [[populate_honest(pt.tree, f.x_b, d_b, f.y_b, 2) for pt in f.groups[0]]]
    g = dataclasses.replace(f, groups=groups, d_b=d_b)
    with pytest.raises(NoSupportError) as info:
        weight_block(g, np.array([[0.9]]), (1, 0))
    assert info.value.skipped == info.value.n_trees == g.n_trees
    w, used, total = weight_block(g, np.array([[0.9]]), (1, 0), check=False)
    assert used[0] == 0 and total == g.n_trees


def test_skip_accounting(data2):
    f = train_forest(data2, small_config(estimator=ONEF_VART, n_trees=25))
    w, used, total = weight_block(f, data2.x[:50], (1, 0))
    v = WeightVector.from_dense((1, 0), w[0], n_used=int(used[0]), n_skipped=int(total - used[0]))
    assert v.n_used + v.n_skipped == f.n_trees
    np.testing.assert_array_equal(v.dense(), w[0])


def test_min_leaf_bumped_and_log(data3):
    cfg = small_config(estimator=ONEF_MCE, min_leaf=3, n_trees=5)
    f = train_forest(data3, cfg)
    assert f.log["min_leaf_effective"] == 6
    assert f.log["n_trees_used"] == [5 - f.n_dropped]


def test_one_sample_variant(data2):
    f = train_forest(data2, small_config(estimator=BASIC_ONESAM, n_trees=10))
    assert f.n_b == data2.n
    for tr in f.trees(0):
        assert np.intersect1d(tr.build, tr.populate).size == 0


def test_tune_oob_grid_of_one(data2):
    cfg = small_config(n_trees=10)
    best, obj = tune_oob(data2, [cfg])
    assert best is cfg and len(obj) == 1


def test_tune_oob_prefers_pure_leaves():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(400, 2))
    d = np.arange(400) % 2
    y = np.where(x[:, 0] > 0, 10.0, 0.0) + 5.0 * d * (x[:, 0] > 0)
    ds = Dataset.from_arrays(x, d, y)
    stumpy = small_config(estimator=ONEF, n_trees=10, min_leaf=150)
    deep = small_config(estimator=ONEF, n_trees=10, min_leaf=5)
    best, obj = tune_oob(ds, [stumpy, deep])
    assert best is deep and obj[1] < obj[0]
    again = tune_oob(ds, [stumpy, deep])[1]
    assert again == obj


def test_default_grid_means():
    grid = default_tuning_grid(ForestConfig(), 58, [5, 13])
    assert sorted({g.tree.feature_poisson_mean for g in grid}) == [6.0, 38.0]
    assert len(grid) == 4


def test_regression_forest_constant_and_step():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(400, 1))
    rf = regression_forest(x, np.full(400, 2.5), RegressionConfig(n_trees=10))
    np.testing.assert_allclose(rf.predict(rng.uniform(size=(20, 1))), 2.5)
    y = np.where(x[:, 0] > 0.5, 4.0, 1.0)
    rf = regression_forest(x, y, RegressionConfig(n_trees=20, min_leaf=5))
    np.testing.assert_allclose(rf.predict(np.array([[0.1], [0.9]])), [1.0, 4.0])


def test_regression_forest_honest_structure():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(300, 2))
    y = x[:, 0] + rng.normal(size=300)
    rf = regression_forest(x, y, RegressionConfig(n_trees=5, seed=3))
    y2 = y.copy()
    y2[rf.est_rows] = rng.permutation(y[rf.est_rows])
    rf2 = regression_forest(x, y2, RegressionConfig(n_trees=5, seed=3))
    for a, b in zip(rf.trees, rf2.trees):
        assert a.tree.same_structure(b.tree)
    assert not np.allclose(rf.predict(x[:20]), rf2.predict(x[:20]))


def test_config_validation():
    with pytest.raises(ValueError):
        ForestConfig(n_trees=0)
    with pytest.raises(ValueError):
        ForestConfig(subsample_ratio=1.5)
    with pytest.raises(ValueError):
        ForestConfig(estimator=BASIC, penalty=True)
    assert ForestConfig(estimator=ONEF_MCE, penalty=True, lc_folds=2).label == "OneF.MCE.Penalty.LC-2"


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10**5), m=st.integers(2, 3))
def test_weight_identity_property(seed, m):
    ds = synth(n=150 * m, m=m, seed=seed, confounded=True)
    f = train_forest(ds, small_config(estimator=ONEF_MCE, n_trees=10, seed=seed))
    w, _, _ = weight_block(f, ds.x[:10], (m - 1, 0), check=False)
    ok = np.abs(w).sum(axis=1) > 0
    np.testing.assert_allclose(w[ok][:, f.d_b == m - 1].sum(axis=1), 1.0, atol=1e-10)
