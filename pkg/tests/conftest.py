import numpy as np
import pytest

from mcforest.data import CATEGORICAL, ORDERED, Dataset
from mcforest.forest import ForestConfig
from mcforest.tree import TreeConfig


def synth(n=400, m=2, p=4, seed=0, effect=1.0, confounded=False, categorical=False):
    """Small synthetic dataset with a known effect ``effect * (x0 > 0)`` per treatment step."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    kinds = [ORDERED] * p
    if categorical:
        x[:, -1] = rng.integers(0, 4, size=n)
        kinds[-1] = CATEGORICAL
    if confounded:
        score = np.exp(np.outer(x[:, 0], np.arange(m)))
        prob = score / score.sum(axis=1, keepdims=True)
        d = (rng.random(n)[:, None] > np.cumsum(prob, axis=1)).sum(axis=1)
    else:
        d = rng.integers(0, m, size=n)
    d[:m] = np.arange(m)
    y = x[:, 0] + 0.5 * x[:, 1] + d * effect * (x[:, 0] > 0) + rng.normal(size=n)
    return Dataset.from_arrays(x, d, y, kinds=kinds)


def small_config(**kw):
    tree = TreeConfig(min_leaf=kw.pop("min_leaf", 5),
                      feature_poisson_mean=kw.pop("feature_poisson_mean", 2.0),
                      max_depth=kw.pop("max_depth", None))
    kw.setdefault("n_trees", 40)
    return ForestConfig(tree=tree, **kw)


@pytest.fixture
def data2():
    return synth(n=400, m=2, seed=1)


@pytest.fixture
def data3():
    return synth(n=450, m=3, seed=2)
