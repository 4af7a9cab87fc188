"""Forest training, IATE weight extraction, out-of-bag tuning and regression forests.

Every effect estimate is a weighted sum of sample-B outcomes. For a point x
and contrast (m, l) each tree contributes ``+1/N_m`` to the treatment-m
members of x's leaf and ``-1/N_l`` to its treatment-l members; the forest
weight is the average over the trees whose leaf holds both treatments.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property, partial

import numpy as np

from . import _kernels, _parallel
from .data import Dataset, SampleSplit, split_ab
from .errors import EstimationError, NoSupportError
from .matching import feature_scales, match_neighbors
from .splitting import (BASIC_MSE, ONEF, ONEF_MCE, ONEF_VART, ContrastSet,
                        CriterionConfig, default_lambda)
from .tree import (ONE_SAMPLE, TWO_SAMPLE, PopulatedTree, TreeBank, TreeConfig,
                   TreeData, grow_tree, populate_honest)

BASIC = "basic"
BASIC_ONESAM = "basic_onesam"
ESTIMATORS = (BASIC, BASIC_ONESAM, ONEF, ONEF_MCE, ONEF_VART)

# spawn-key namespaces of the per-purpose random streams
_STREAM_CENTERING = 1
_STREAM_TREE = 2
_STREAM_REGRESSION = 3

_BLOCK_CELLS = 1 << 22


@dataclass(frozen=True)
class ForestConfig:
    """Estimator choice and forest tuning parameters.

    ``estimator`` picks the splitting rule (``basic`` grows one forest per
    treatment with plain MSE splitting; ``basic_onesam`` does the same with
    one-sample honesty). ``penalty`` adds the propensity penalty,
    ``lc_folds > 0`` turns on local centering with that many folds.
    """

    estimator: str = ONEF_MCE
    penalty: bool = False
    lc_folds: int = 0
    n_trees: int = 1000
    subsample_ratio: float = 0.5
    ab_fraction: float = 0.5
    tree: TreeConfig = field(default_factory=TreeConfig)
    penalty_lambda: float | None = None
    lambda_scale: float = 1.0
    contrasts: ContrastSet | None = None
    lc_n_trees: int | None = None
    max_skip_share: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0.0 < self.subsample_ratio <= 1.0:
            raise ValueError("subsample_ratio must lie in (0, 1]")
        if self.penalty and self.estimator in (BASIC, BASIC_ONESAM):
            raise ValueError("the basic estimator has no penalty variant")
        if self.lc_folds < 0 or self.lc_folds == 1:
            raise ValueError("lc_folds must be 0 or >= 2")
        if not 0.0 <= self.max_skip_share < 1.0:
            raise ValueError("max_skip_share must lie in [0, 1)")

    @property
    def per_treatment(self) -> bool:
        return self.estimator in (BASIC, BASIC_ONESAM)

    @property
    def one_sample(self) -> bool:
        return self.estimator == BASIC_ONESAM or self.tree.honesty_mode == ONE_SAMPLE

    @property
    def rule(self) -> str:
        return BASIC_MSE if self.per_treatment else self.estimator

    @property
    def label(self) -> str:
        names = {BASIC: "Basic", BASIC_ONESAM: "Basic.OneSam", ONEF: "OneF",
                 ONEF_MCE: "OneF.MCE", ONEF_VART: "OneF.VarT"}
        out = names[self.estimator]
        if self.penalty:
            out += ".Penalty"
        if self.lc_folds:
            out += f".LC-{self.lc_folds}"
        return out

    def criterion(self) -> CriterionConfig:
        return CriterionConfig(self.rule, self.penalty, self.penalty_lambda,
                               self.lambda_scale, self.contrasts)

    def tree_config(self, m: int) -> TreeConfig:
        """Tree settings with this estimator's criterion.

        ``min_leaf`` is raised to ``m * min_leaf_per_treatment`` for joint rules.
        """
        t = self.tree
        min_leaf = t.min_leaf
        if not self.per_treatment:
            min_leaf = max(min_leaf, m * t.min_leaf_per_treatment)
        mode = ONE_SAMPLE if self.one_sample else TWO_SAMPLE
        return dataclasses.replace(t, criterion=self.criterion(), min_leaf=min_leaf,
                                   honesty_mode=mode)

    def with_(self, **changes) -> "ForestConfig":
        tree_changes = {k: changes.pop(k) for k in list(changes)
                        if k in {f.name for f in dataclasses.fields(TreeConfig)}}
        cfg = dataclasses.replace(self, **changes)
        if tree_changes:
            cfg = dataclasses.replace(cfg, tree=dataclasses.replace(cfg.tree, **tree_changes))
        return cfg


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Sparse signed weights over sample-B rows for one contrast.

    ``indices`` are sample-B positions with nonzero weight. For an IATE the
    treatment-m weights sum to +1 and the treatment-l weights to -1.
    """

    contrast: tuple
    indices: np.ndarray
    values: np.ndarray
    n_b: int
    tag: object = None
    n_used: int = 0
    n_skipped: int = 0

    def dense(self) -> np.ndarray:
        out = np.zeros(self.n_b)
        out[self.indices] = self.values
        return out

    def dot(self, y: np.ndarray) -> float:
        return float(self.dense() @ np.asarray(y, dtype=np.float64))

    @classmethod
    def from_dense(cls, contrast, w, tag=None, n_used=0, n_skipped=0) -> "WeightVector":
        w = np.asarray(w, dtype=np.float64)
        idx = np.flatnonzero(w)
        return cls(tuple(contrast), idx, w[idx], w.size, tag, n_used, n_skipped)


@dataclass(eq=False)
class Forest:
    """Trained estimator; treat as immutable.

    ``groups`` holds the populated trees: a single group for the joint
    estimators, one group per treatment for ``basic``. Sample-B arrays
    (``x_b``, ``d_b``, ``y_b``) are what all weights refer to; ``y_b`` is
    recentred when local centering is on (``y_b_raw`` keeps the original).
    """

    config: ForestConfig
    m: int
    features: tuple
    treatment_labels: tuple
    split: SampleSplit | None
    groups: list
    x_b: np.ndarray
    d_b: np.ndarray
    y_b: np.ndarray
    y_b_raw: np.ndarray
    extra_b: dict
    x_a: np.ndarray
    d_a: np.ndarray
    y_a: np.ndarray
    y_tilde: np.ndarray | None
    lam: float
    n_dropped: int = 0
    log: dict = field(default_factory=dict)
    centering: object = None
    levels: dict = field(default_factory=dict)

    @property
    def n_b(self) -> int:
        return self.d_b.size

    @property
    def n_trees(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.features]

    @cached_property
    def banks(self) -> list:
        return [TreeBank.from_trees([pt.tree for pt in g], g) for g in self.groups]

    def trees(self, group: int = 0) -> list:
        return [pt.tree for pt in self.groups[group]]


def _tree_seed(seed: int, group: int, t: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_STREAM_TREE, group, t)))


def _grow_task(key, state_key="forest"):
    st = _parallel.STATE[state_key]
    group, t = key
    rng = _tree_seed(st["seed"], group, t)
    pool = st["pools"][group]
    size = max(1, int(round(st["ratio"] * pool.size)))
    sub = np.sort(rng.choice(pool, size=size, replace=False))
    populate = st["b_members"][group]
    if st["one_sample"]:
        perm = rng.permutation(sub)
        half = perm.size // 2
        build = np.sort(perm[:half])
        populate = np.sort(perm[half:])
    else:
        build = sub
    tree = grow_tree(st["data"], build, st["tcfg"], st["lam"], rng, populate=populate, stream=t)
    return populate_honest(tree, st["x_b"], st["d_b"], st["y_b"], st["m"])


def _grow_groups(state, n_trees, n_groups, threads):
    _parallel.STATE["forest"] = state
    try:
        keys = [(g, t) for g in range(n_groups) for t in range(n_trees)]
        res = _parallel.pmap(partial(_grow_task, state_key="forest"), keys, threads)
    finally:
        _parallel.STATE.pop("forest", None)
    groups = [[] for _ in range(n_groups)]
    for (g, _), pt in zip(keys, res):
        groups[g].append(pt)
    return groups


def train_forest(ds: Dataset, cfg: ForestConfig, threads: int = 1) -> Forest:
    """Run the full training pipeline.

    Split into samples A and B, optionally recentre outcomes, match
    neighbours within A (MCE rule), grow ``cfg.n_trees`` trees on random
    subsamples of A and populate their leaves with sample B. With one-sample
    honesty the whole dataset plays both roles and every tree halves its own
    subsample instead.

    Raises
    ------
    EstimationError
        If every tree of some forest group is degenerate.
    """
    m = ds.m
    tcfg = cfg.tree_config(m)
    if cfg.one_sample:
        split = None
        a = b = np.arange(ds.n)
    else:
        split = split_ab(ds, cfg.seed, cfg.ab_fraction)
        a, b = split.a_indices, split.b_indices
    x_a, d_a, y_a = ds.x[a], ds.d[a], ds.y[a]
    x_b, d_b, y_b_raw = ds.x[b], ds.d[b], ds.y[b]
    y_b = y_b_raw
    centering = None
    log = {"estimator": cfg.label, "n": ds.n, "n_a": int(a.size), "n_b": int(b.size),
           "min_leaf_effective": tcfg.min_leaf}
    if cfg.lc_folds:
        from .centering import fit_centering, recenter
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(_STREAM_CENTERING,)))
        centering = fit_centering(x_a, y_a, d_a, cfg.lc_folds, cfg, rng, threads=threads)
        y_a = recenter(centering, "A")
        y_b = recenter(centering, "B", x_b, y_b_raw) if not cfg.one_sample else y_a
    y_tilde = None
    if cfg.rule == ONEF_MCE:
        y_tilde = match_neighbors(x_a, d_a, y_a, m, feature_scales(x_a))
    crit = tcfg.criterion
    lam = 0.0
    if crit.penalty:
        cs = crit.contrasts or ContrastSet.all_pairs(m)
        lam = (float(crit.penalty_lambda) if crit.penalty_lambda is not None
               else default_lambda(crit.rule, y_a, d_a, cs, crit.lambda_scale))
    log["lambda"] = lam
    data = TreeData.build(x_a, d_a, y_a, m, ds.categorical_mask, y_tilde,
                          n_levels=_n_levels(ds))
    if cfg.per_treatment:
        pools = [np.flatnonzero(d_a == k) for k in range(m)]
        b_members = [np.flatnonzero(d_b == k) for k in range(m)]
    else:
        pools = [np.arange(a.size)]
        b_members = [None]
    state = dict(seed=cfg.seed, pools=pools, ratio=cfg.subsample_ratio, b_members=b_members,
                 one_sample=cfg.one_sample, data=data, tcfg=tcfg, lam=lam, x_b=x_b, d_b=d_b,
                 y_b=y_b, m=m)
    grown = _grow_groups(state, cfg.n_trees, len(pools), threads)
    groups = []
    dropped = 0
    for g, trees in enumerate(grown):
        keep = [pt for pt in trees if not pt.tree.degenerate]
        dropped += len(trees) - len(keep)
        if not keep:
            raise EstimationError(f"all {len(trees)} trees of forest group {g} are degenerate")
        groups.append(keep)
    log["n_dropped"] = dropped
    log["n_trees_used"] = [len(g) for g in groups]
    log["leaves_per_tree"] = float(np.mean([pt.tree.n_leaves for g in groups for pt in g]))
    extra_b = {k: np.asarray(v)[b] for k, v in ds.extra.items()}
    return Forest(cfg, m, ds.features, ds.treatment_labels, split, groups, x_b, d_b, y_b,
                  y_b_raw, extra_b, x_a, d_a, y_a, y_tilde, lam, dropped, log, centering,
                  dict(ds.levels))


def _n_levels(ds: Dataset) -> np.ndarray:
    out = np.zeros(ds.p, dtype=np.int64)
    for f in ds.features:
        if f.kind == "categorical":
            n_lab = len(ds.levels.get(f.name, ()))
            out[f.index] = max(n_lab, int(ds.x[:, f.index].max()) + 1)
    return out


def _check_contrast(f: Forest, contrast) -> tuple:
    mm, ll = (int(c) for c in contrast)
    if not (0 <= ll < f.m and 0 <= mm < f.m) or mm == ll:
        raise ValueError(f"invalid contrast {contrast!r} for {f.m} treatments")
    return mm, ll


def weight_block(f: Forest, x_eval: np.ndarray, contrast, check: bool = True):
    """Dense IATE weights for a block of evaluation points.

    Returns ``(w, used, n_trees)`` with ``w`` of shape (n_eval, n_b) and
    ``used[e]`` the number of trees contributing at point e (for ``basic``
    the smaller of the two per-treatment forests' counts).

    Raises
    ------
    NoSupportError
        If at some point more than ``max_skip_share`` of the trees (or all of
        them) lack the contrast's treatments, when ``check`` is set.
    """
    mm, ll = _check_contrast(f, contrast)
    x_eval = np.ascontiguousarray(np.atleast_2d(x_eval), dtype=np.float64)
    c = x_eval.shape[0]
    if f.config.per_treatment:
        w = np.zeros((c, f.n_b))
        used_all = np.full(c, np.iinfo(np.int64).max)
        total = np.inf
        for k, sign in ((mm, 1.0), (ll, -1.0)):
            bank = f.banks[k]
            part = np.zeros((c, f.n_b))
            used = np.zeros(c, dtype=np.int64)
            _kernels.accumulate_weights(bank.apply(x_eval), bank.leaf_off, bank.ptr,
                                        bank.members, bank.counts, f.d_b, k, -1, part, used)
            _support_check(used, bank.n_trees, f.config.max_skip_share, check)
            w += sign * part / np.maximum(used, 1)[:, None]
            used_all = np.minimum(used_all, used)
            total = min(total, bank.n_trees)
        return w, used_all, int(total)
    bank = f.banks[0]
    w = np.zeros((c, f.n_b))
    used = np.zeros(c, dtype=np.int64)
    _kernels.accumulate_weights(bank.apply(x_eval), bank.leaf_off, bank.ptr, bank.members,
                                bank.counts, f.d_b, mm, ll, w, used)
    _support_check(used, bank.n_trees, f.config.max_skip_share, check)
    w /= np.maximum(used, 1)[:, None]
    return w, used, bank.n_trees


def _support_check(used, n_trees, max_skip, check):
    if not check or used.size == 0:
        return
    skipped = n_trees - used
    bad = (used == 0) | (skipped > max_skip * n_trees)
    if np.any(bad):
        e = int(np.flatnonzero(bad)[0])
        raise NoSupportError(f"no support at evaluation point {e}: {int(skipped[e])} of "
                             f"{n_trees} trees lack the contrast's treatments",
                             int(skipped[e]), n_trees)


def iter_weight_blocks(f: Forest, x_eval: np.ndarray, contrast, check: bool = True):
    """Yield ``(start, w, used)`` over row blocks of ``x_eval`` of bounded memory."""
    x_eval = np.atleast_2d(np.asarray(x_eval, dtype=np.float64))
    step = max(1, _BLOCK_CELLS // max(1, f.n_b))
    for lo in range(0, x_eval.shape[0], step):
        w, used, _ = weight_block(f, x_eval[lo:lo + step], contrast, check)
        yield lo, w, used


def iate_weights(f: Forest, x, contrast, tag=None) -> WeightVector:
    """Weight vector of the IATE at a single point ``x``."""
    w, used, total = weight_block(f, np.asarray(x, dtype=np.float64).reshape(1, -1), contrast)
    return WeightVector.from_dense(contrast, w[0], tag=tag, n_used=int(used[0]),
                                   n_skipped=int(total - used[0]))


def predict_iate(f: Forest, x, contrast) -> np.ndarray | float:
    """IATE predictions averaged from the trees' populated leaf means.

    This route never forms weights; it agrees with ``weights @ y_b`` because
    every tree's leaf mean difference is that tree's weighted sum.
    """
    mm, ll = _check_contrast(f, contrast)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xe = np.ascontiguousarray(x.reshape(1, -1) if single else x)
    if f.config.per_treatment:
        out = np.zeros(xe.shape[0])
        for k, sign in ((mm, 1.0), (ll, -1.0)):
            total, used = _leaf_mean_sum(f.banks[k], xe, k, None)
            _support_check(used, f.banks[k].n_trees, f.config.max_skip_share, True)
            out += sign * total / np.maximum(used, 1)
    else:
        bank = f.banks[0]
        total, used = _leaf_mean_sum(bank, xe, mm, ll)
        _support_check(used, bank.n_trees, f.config.max_skip_share, True)
        out = total / np.maximum(used, 1)
    return float(out[0]) if single else out


def _leaf_mean_sum(bank, x, mm, ll):
    leaf = bank.apply(x)
    total = np.zeros(x.shape[0])
    used = np.zeros(x.shape[0], dtype=np.int64)
    for t in range(bank.n_trees):
        rows = bank.leaf_off[t] + leaf[t]
        c = bank.counts[rows]
        mu = bank.means[rows]
        if ll is None:
            ok = c[:, mm] > 0
            val = mu[:, mm]
        else:
            ok = (c[:, mm] > 0) & (c[:, ll] > 0)
            val = mu[:, mm] - mu[:, ll]
        total[ok] += val[ok]
        used += ok
    return total, used


# ---------------------------------------------------------------- OOB tuning

def oob_objective(f: Forest) -> float:
    """Out-of-bag value of the forest's own splitting objective (no penalty).

    Each tree's leaf means are taken from its building observations and
    evaluated on the sample-A observations outside its subsample; leaves are
    weighted by their out-of-bag size.
    """
    vals = []
    cs = f.config.contrasts or ContrastSet.all_pairs(f.m)
    rule = f.config.rule
    n_a = f.d_a.size
    for g, group in enumerate(f.groups):
        bank = TreeBank.from_trees([pt.tree for pt in group])
        leaf_a = bank.apply(f.x_a)
        for t, pt in enumerate(group):
            tr = pt.tree
            inbag = np.zeros(n_a, dtype=bool)
            inbag[tr.build] = True
            if f.config.one_sample and tr.populate is not None:
                inbag[tr.populate] = True
            if f.config.per_treatment:
                inbag |= f.d_a != g
            leaf = leaf_a[t]
            b_idx = tr.build
            val = _tree_oob(leaf, b_idx, ~inbag, f.d_a, f.y_a, f.y_tilde, f.m, rule, cs,
                            tr.n_leaves)
            if np.isfinite(val):
                vals.append(val)
    if not vals:
        return np.inf
    return float(np.mean(vals))


def _tree_oob(leaf, build, oob, d, y, y_tilde, m, rule, cs, n_leaves):
    nl = n_leaves
    if rule == BASIC_MSE:
        cnt = np.bincount(leaf[build], minlength=nl)
        mu = np.bincount(leaf[build], weights=y[build], minlength=nl) / np.maximum(cnt, 1)
        o = np.flatnonzero(oob & (cnt[leaf] > 0))
        if o.size == 0:
            return np.nan
        return float(np.mean((mu[leaf[o]] - y[o]) ** 2))
    flat = leaf[build] * m + d[build]
    cnt = np.bincount(flat, minlength=nl * m).reshape(nl, m)
    mu = (np.bincount(flat, weights=y[build], minlength=nl * m).reshape(nl, m)
          / np.maximum(cnt, 1))
    o = np.flatnonzero(oob)
    if o.size == 0:
        return np.nan
    lo, do, yo = leaf[o], d[o], y[o]
    total, weight = 0.0, 0.0
    for leaf_id in np.unique(lo):
        sel = lo == leaf_id
        part = 0.0
        ok = True
        for (a, b), w in zip(cs.pairs, cs.weights):
            if cnt[leaf_id, a] == 0 or cnt[leaf_id, b] == 0:
                ok = False
                break
            ya, yb = yo[sel & (do == a)], yo[sel & (do == b)]
            if ya.size == 0 or yb.size == 0:
                ok = False
                break
            if rule == ONEF_VART:
                part -= w * (ya.mean() - yb.mean()) ** 2
                continue
            ma, mb = mu[leaf_id, a], mu[leaf_id, b]
            term = np.mean((ma - ya) ** 2) + np.mean((mb - yb) ** 2)
            if rule == ONEF_MCE:
                pair = sel & ((do == a) | (do == b))
                yt = y_tilde[o[pair]]
                term -= 2.0 * np.mean((ma - yt[:, a]) * (mb - yt[:, b]))
            part += w * term
        if ok:
            size = float(sel.sum())
            total += size * part
            weight += size
    return total / weight if weight > 0 else np.nan


def tune_oob(ds: Dataset, grid, threads: int = 1):
    """Pick the grid configuration with the smallest out-of-bag objective.

    Returns ``(best_config, objectives)``; ties go to the earliest entry.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("tuning grid is empty")
    objectives = [oob_objective(train_forest(ds, cfg, threads)) for cfg in grid]
    best = int(np.argmin(objectives))
    return grid[best], objectives


def default_tuning_grid(cfg: ForestConfig, p: int, min_leaves=None):
    """Grid over a small and a large Poisson mean for the number of split features."""
    small = max(1.0, round(0.1 * p))
    large = max(small, round(0.65 * p))
    means = sorted({small, large})
    leaves = min_leaves or [cfg.tree.min_leaf]
    return [cfg.with_(feature_poisson_mean=float(mu), min_leaf=int(ml))
            for ml in leaves for mu in means]


# ------------------------------------------------------------ regression RF

@dataclass(frozen=True)
class RegressionConfig:
    """Honest regression forest for E(Y|X): trees on half, leaf means on the other half."""

    n_trees: int = 1000
    subsample_ratio: float = 0.5
    min_leaf: int = 5
    feature_poisson_mean: float = 5.0
    honest_fraction: float = 0.5
    seed: int = 0


@dataclass(eq=False)
class RegressionForest:
    trees: list
    bank: TreeBank
    fallback: float
    build_rows: np.ndarray
    est_rows: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
        bank = self.bank
        leaf = bank.apply(x)
        g = bank.leaf_off[:-1, None] + leaf
        cnt = bank.counts[g, 0]
        mu = np.where(cnt > 0, bank.means[g, 0], 0.0)
        used = (cnt > 0).sum(axis=0)
        out = np.full(x.shape[0], self.fallback)
        ok = used > 0
        out[ok] = mu[:, ok].sum(axis=0) / used[ok]
        return out


def regression_forest(x, y, cfg: RegressionConfig, categorical=None, n_levels=None,
                      threads: int = 1) -> RegressionForest:
    """Fit an honest regression forest with the MSE criterion."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(_STREAM_REGRESSION,)))
    perm = rng.permutation(n)
    n_build = int(np.ceil(cfg.honest_fraction * n))
    build_rows = np.sort(perm[:n_build])
    est_rows = np.sort(perm[n_build:])
    if est_rows.size == 0:
        est_rows = build_rows
    zeros = np.zeros(n, dtype=np.int64)
    data = TreeData.build(x[build_rows], zeros[build_rows], y[build_rows], 1, categorical,
                          n_levels=n_levels)
    tcfg = TreeConfig(min_leaf=cfg.min_leaf, feature_poisson_mean=cfg.feature_poisson_mean,
                      criterion=CriterionConfig(BASIC_MSE))
    state = dict(seed=cfg.seed, pools=[np.arange(build_rows.size)], ratio=cfg.subsample_ratio,
                 b_members=[None], one_sample=False, data=data, tcfg=tcfg, lam=0.0,
                 x_b=x[est_rows], d_b=zeros[est_rows], y_b=y[est_rows], m=1)
    grown = _grow_groups(state, cfg.n_trees, 1, threads)[0]
    bank = TreeBank.from_trees([pt.tree for pt in grown], grown)
    return RegressionForest(grown, bank, float(y[est_rows].mean()), build_rows, est_rows)
