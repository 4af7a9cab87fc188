import numpy as np
import pytest

from mcforest.aggregation import (GroupSpec, Population, ate_weights, estimate_effect,
                                  evaluate_population, gate_family, gate_weights, group_label,
                                  sample_b)
from mcforest.forest import ForestConfig, iate_weights, predict_iate, train_forest
from mcforest.splitting import ONEF, ONEF_MCE
from mcforest.tree import TreeConfig

from conftest import small_config, synth


@pytest.fixture(scope="module")
def forest():
    return train_forest(synth(n=500, m=2, seed=11, categorical=True),
                        small_config(estimator=ONEF_MCE, n_trees=30))


def _pop(f, extra=None):
    pop = sample_b(f)
    cols = dict(pop.columns)
    cols.update(extra or {})
    return Population(pop.x, pop.d, cols)


def test_group_label():
    assert group_label("female", 0.0) == "female=0"
    assert group_label("age", np.float64(2.5)) == "age=2.5"
    assert group_label("sector", np.int64(3)) == "sector=3"


def test_gate_over_everything_is_ate(forest):
    pop = _pop(forest, {"all": np.ones(forest.n_b)})
    g = gate_weights(forest, GroupSpec("all", 1.0), (1, 0), pop)
    a = ate_weights(forest, (1, 0), pop=pop)
    np.testing.assert_array_equal(g.dense(), a.dense())
    eg = estimate_effect(forest, (1, 0), "GATE", GroupSpec("all", 1.0), pop=pop)
    ea = estimate_effect(forest, (1, 0), "ATE", pop=pop)
    assert eg.point == ea.point and eg.variance == ea.variance


def test_singleton_gate_is_iate(forest):
    pop = _pop(forest, {"id": np.arange(forest.n_b)})
    g = gate_weights(forest, GroupSpec("id", 7), (1, 0), pop)
    w = iate_weights(forest, forest.x_b[7], (1, 0))
    np.testing.assert_allclose(g.dense(), w.dense(), atol=1e-15)


def test_two_member_average(forest):
    pop = _pop(forest, {"pair": (np.arange(forest.n_b) < 2).astype(float)})
    g = gate_weights(forest, GroupSpec("pair", 1.0), (1, 0), pop).dense()
    w0 = iate_weights(forest, forest.x_b[0], (1, 0)).dense()
    w1 = iate_weights(forest, forest.x_b[1], (1, 0)).dense()
    np.testing.assert_allclose(g, (w0 + w1) / 2, atol=1e-15)


def test_ate_equals_mean_of_iates(forest):
    pop = _pop(forest)
    pe = evaluate_population(forest, pop, (1, 0), ["x3"])
    assert abs(pe.ate.point - pe.iate.mean()) < 1e-12
    col = pop.columns["x3"]
    for val, e in zip(pe.gates["x3"].values, pe.gates["x3"].estimates):
        assert abs(e.point - pe.iate[col == val].mean()) < 1e-12
    np.testing.assert_allclose(pe.iate, predict_iate(forest, pop.x, (1, 0)), atol=1e-10)


def test_weight_conservation_over_partition(forest):
    pop = _pop(forest)
    col = pop.columns["x3"]
    total = np.zeros(forest.n_b)
    for v in np.unique(col):
        total += (col == v).sum() * gate_weights(forest, GroupSpec("x3", v), (1, 0), pop).dense()
    np.testing.assert_allclose(total / forest.n_b, ate_weights(forest, (1, 0)).dense(),
                               atol=1e-14)


def test_averaging_keeps_weight_sums(forest):
    w = ate_weights(forest, (1, 0)).dense()
    assert w[forest.d_b == 1].sum() == pytest.approx(1.0, abs=1e-12)
    assert w[forest.d_b == 0].sum() == pytest.approx(-1.0, abs=1e-12)


def test_delta_filters_population_only(forest):
    treated = ate_weights(forest, (1, 0), delta=(1,)).dense()
    mask = forest.d_b == 1
    direct = np.mean([iate_weights(forest, forest.x_b[i], (1, 0)).dense()
                      for i in np.flatnonzero(mask)], axis=0)
    np.testing.assert_allclose(treated, direct, atol=1e-14)


def test_atet_close_to_ate_under_homogeneous_effect():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1200, 3))
    d = (rng.random(1200) < 0.5).astype(int)
    y = x[:, 0] + 1.0 * d + rng.normal(size=1200)
    from mcforest.data import Dataset
    f = train_forest(Dataset.from_arrays(x, d, y), small_config(n_trees=30))
    ate = estimate_effect(f, (1, 0))
    atet = estimate_effect(f, (1, 0), delta=(1,))
    assert abs(ate.point - atet.point) < 3 * ate.std_err


def test_empty_group_errors(forest):
    with pytest.raises(ValueError, match="empty"):
        gate_weights(forest, GroupSpec("x3", 99.0), (1, 0))
    with pytest.raises(KeyError):
        gate_weights(forest, GroupSpec("nope", 1.0), (1, 0))


def test_stump_ate_closed_form():
    ds = synth(n=300, m=2, seed=3)
    cfg = ForestConfig(estimator=ONEF, n_trees=1, subsample_ratio=1.0,
                       tree=TreeConfig(min_leaf=10**6))
    f = train_forest(ds, cfg)
    y1, y0 = f.y_b[f.d_b == 1], f.y_b[f.d_b == 0]
    n1, n0 = y1.size, y0.size
    # k capped at each group size: one window holding the whole group
    e = estimate_effect(f, (1, 0), k=10**9)
    assert e.point == pytest.approx(y1.mean() - y0.mean(), abs=1e-12)
    assert e.variance == pytest.approx(y1.var(ddof=1) / n1 + y0.var(ddof=1) / n0, rel=1e-10)


def test_gate_family_two_groups(forest):
    fam = gate_family(forest, "x3", (1, 0), values=[0.0, 1.0])
    assert len(fam.adjacent) == 1 and fam.wald[1] == 1
    diff, p = fam.adjacent[0]
    assert diff == pytest.approx(fam.estimates[1].point - fam.estimates[0].point)
    assert 0 <= p <= 1
