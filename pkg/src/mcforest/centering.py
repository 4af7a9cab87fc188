"""Local centering: outcomes minus a cross-fitted estimate of E(Y|X)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .forest import RegressionConfig, regression_forest

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CenteringModel:
    """K regression forests, forest k trained on every fold of sample A except fold k."""

    k: int
    folds: np.ndarray
    predictors: list
    x_a: np.ndarray
    y_a: np.ndarray

    def fold_members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.folds == k)


def stratified_folds(d: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold label per observation; each treatment is spread evenly over the folds."""
    d = np.asarray(d)
    folds = np.empty(d.size, dtype=np.int64)
    offset = 0
    for t in np.unique(d):
        idx = rng.permutation(np.flatnonzero(d == t))
        # continue the round robin across treatments so fold sizes stay balanced
        folds[idx] = (offset + np.arange(idx.size)) % k
        offset += idx.size
    return folds


def fit_centering(x_a, y_a, d_a, k: int, cfg, rng: np.random.Generator,
                  threads: int = 1) -> CenteringModel:
    """Train the K cross-fitting regression forests on sample A.

    ``cfg`` is the forest configuration; its tree settings and
    ``lc_n_trees`` (default ``n_trees``) drive the regression forests.
    """
    x_a = np.ascontiguousarray(x_a, dtype=np.float64)
    y_a = np.asarray(y_a, dtype=np.float64)
    d_a = np.asarray(d_a)
    if k < 2:
        raise ValueError("local centering needs at least 2 folds")
    if y_a.size < 2 * k:
        raise ValueError(f"sample A of size {y_a.size} cannot support {k} folds")
    folds = stratified_folds(d_a, k, rng)
    for f in range(k):
        if np.unique(d_a[folds == f]).size < 2:
            log.warning("centering fold %d holds a single treatment", f)
    seeds = rng.integers(0, 2**63 - 1, size=k)
    n_trees = cfg.lc_n_trees or cfg.n_trees
    predictors = []
    for f in range(k):
        train = np.flatnonzero(folds != f)
        rcfg = RegressionConfig(n_trees=n_trees, subsample_ratio=cfg.subsample_ratio,
                                min_leaf=cfg.tree.min_leaf,
                                feature_poisson_mean=cfg.tree.feature_poisson_mean,
                                seed=int(seeds[f]))
        predictors.append(regression_forest(x_a[train], y_a[train], rcfg, threads=threads))
    return CenteringModel(k, folds, predictors, x_a, y_a)


def predict_a(model: CenteringModel) -> np.ndarray:
    """Cross-fitted E(Y|X) for sample A (each row by the forest that excluded its fold)."""
    out = np.empty(model.y_a.size)
    for f, pred in enumerate(model.predictors):
        idx = model.fold_members(f)
        if idx.size:
            out[idx] = pred.predict(model.x_a[idx])
    return out


def predict_b(model: CenteringModel, x) -> np.ndarray:
    """Average of the K fold predictors at new rows."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return np.mean([p.predict(x) for p in model.predictors], axis=0)


def recenter(model: CenteringModel, sample: str, x=None, y=None) -> np.ndarray:
    """Recentred outcomes ``y - E(Y|X)`` for sample ``"A"`` or ``"B"``.

    Sample B needs its features ``x`` and outcomes ``y``.
    """
    if sample == "A":
        return model.y_a - predict_a(model)
    if sample == "B":
        if x is None or y is None:
            raise ValueError("recentering sample B needs x and y")
        return np.asarray(y, dtype=np.float64) - predict_b(model, x)
    raise ValueError(f"sample must be 'A' or 'B', got {sample!r}")
