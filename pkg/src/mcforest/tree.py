"""Honest causal trees: split search, growing, and population with sample B."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .splitting import (BASIC_MSE, ONEF_MCE, RULE_CODES, ContrastSet,
                        CriterionConfig)

TWO_SAMPLE = "two_sample"
ONE_SAMPLE = "one_sample_honest"


@dataclass(frozen=True)
class TreeConfig:
    """Tree-growing settings.

    min_leaf : minimum number of building observations per leaf.
    min_leaf_per_treatment : per-treatment minimum in each daughter (joint rules).
    feature_poisson_mean : the number of candidate features per split is
        ``min(p, 1 + Poisson(feature_poisson_mean))``.
    min_daughter_share : optional balance condition; each daughter must hold
        at least this share of the parent (0 disables it).
    """

    min_leaf: int = 5
    min_leaf_per_treatment: int = 2
    feature_poisson_mean: float = 5.0
    max_depth: int | None = None
    criterion: CriterionConfig = field(default_factory=CriterionConfig)
    honesty_mode: str = TWO_SAMPLE
    min_daughter_share: float = 0.0

    def __post_init__(self):
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.min_leaf_per_treatment < 1:
            raise ValueError("min_leaf_per_treatment must be >= 1")
        if self.feature_poisson_mean < 0:
            raise ValueError("feature_poisson_mean must be >= 0")
        if self.honesty_mode not in (TWO_SAMPLE, ONE_SAMPLE):
            raise ValueError(f"unknown honesty mode {self.honesty_mode!r}")
        if not 0.0 <= self.min_daughter_share < 0.5:
            raise ValueError("min_daughter_share must lie in [0, 0.5)")


@dataclass(frozen=True, eq=False)
class TreeData:
    """Arrays a tree is grown on (typically sample A, possibly recentred)."""

    x: np.ndarray
    d: np.ndarray
    y: np.ndarray
    m: int
    categorical: np.ndarray
    n_levels: np.ndarray
    y_tilde: np.ndarray | None = None

    @classmethod
    def build(cls, x, d, y, m, categorical=None, y_tilde=None, n_levels=None):
        x = np.ascontiguousarray(x, dtype=np.float64)
        p = x.shape[1]
        cat = np.zeros(p, dtype=bool) if categorical is None else np.asarray(categorical, bool)
        if n_levels is None:
            n_levels = np.zeros(p, dtype=np.int64)
            for j in np.flatnonzero(cat):
                n_levels[j] = int(x[:, j].max()) + 1 if x.shape[0] else 0
        yt = None if y_tilde is None else np.ascontiguousarray(y_tilde, dtype=np.float64)
        return cls(x, np.ascontiguousarray(d, dtype=np.int64),
                   np.ascontiguousarray(y, dtype=np.float64), int(m), cat,
                   np.asarray(n_levels, dtype=np.int64), yt)


@dataclass(frozen=True)
class Split:
    """Chosen split of a node.

    Ordered features send ``x <= threshold`` left; categorical features send
    the levels in ``left_levels`` left.
    """

    feature: int
    threshold: float = np.nan
    left_levels: tuple | None = None
    value: float = np.nan

    @property
    def categorical(self) -> bool:
        return self.left_levels is not None

    def goes_left(self, x: np.ndarray) -> np.ndarray:
        col = np.asarray(x)[..., self.feature]
        if self.categorical:
            return np.isin(col, np.asarray(self.left_levels, dtype=np.float64))
        return col <= self.threshold


@dataclass(frozen=True, eq=False)
class Tree:
    """Split structure of one tree.

    Node arrays are parallel; ``feature < 0`` marks a leaf and
    ``leaf_of_node`` maps node index to leaf index (-1 for internal nodes).
    ``build`` are the indices (into the growing data) of the observations the
    structure was estimated on; ``populate`` the sample-B indices allowed to
    fill the leaves (None means all of sample B).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    left_levels: dict
    leaf_of_node: np.ndarray
    n_levels: np.ndarray
    build: np.ndarray
    populate: np.ndarray | None = None
    degenerate: bool = False
    stream: int = 0

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def same_structure(self, other: "Tree") -> bool:
        return (np.array_equal(self.feature, other.feature)
                and np.array_equal(self.threshold, other.threshold, equal_nan=True)
                and np.array_equal(self.left, other.left)
                and np.array_equal(self.right, other.right)
                and self.left_levels == other.left_levels)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Leaf index of every row of ``x``."""
        return TreeBank.from_trees([self]).apply(x)[0]

    def dump(self, names=None) -> str:
        """Indented text rendering of the split structure."""
        lines = []

        def walk(k, depth):
            pad = "  " * depth
            if self.feature[k] < 0:
                lines.append(f"{pad}leaf {self.leaf_of_node[k]}")
                return
            j = int(self.feature[k])
            nm = names[j] if names is not None else f"x{j}"
            if k in self.left_levels:
                cond = f"{nm} in {{{', '.join(str(v) for v in self.left_levels[k])}}}"
            else:
                cond = f"{nm} <= {float(self.threshold[k])!r}"
            lines.append(f"{pad}{cond}")
            walk(int(self.left[k]), depth + 1)
            lines.append(f"{pad}else")
            walk(int(self.right[k]), depth + 1)

        walk(0, 0)
        return "\n".join(lines)


@dataclass(frozen=True, eq=False)
class PopulatedTree:
    """Tree plus its sample-B leaf populations.

    ``leaf_of_b[j]`` is the leaf of sample-B row j, or -1 when the row is not
    allowed to populate this tree. ``counts``/``means`` are
    (n_leaves, m) arrays; means of empty cells are NaN.
    """

    tree: Tree
    leaf_of_b: np.ndarray
    counts: np.ndarray
    means: np.ndarray

    def members(self, leaf: int, treatment: int, d_b: np.ndarray) -> np.ndarray:
        return np.flatnonzero((self.leaf_of_b == leaf) & (d_b == treatment))


def draw_features(p: int, poisson_mean: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted random subset of ``min(p, 1 + Poisson(mean))`` feature indices."""
    return _kernels.draw_features(p, float(poisson_mean), rng.random(p + 1))


def candidate_values(node_obs: np.ndarray, data: TreeData, cfg: TreeConfig, lam: float,
                     feature: int):
    """Criterion values of all split positions of one feature in one node.

    Returns ``(values, keys, cat_order)``: ``values[s]`` scores sending the
    first ``s + 1`` sorted rows left, ``keys`` are the sorted split keys and
    ``cat_order`` the level order used for categorical features (else None).
    """
    crit = cfg.criterion
    rule = crit.rule
    n = node_obs.size
    y = data.y[node_obs]
    center = y.mean()
    yc = y - center
    d = data.d[node_obs] if rule != BASIC_MSE else np.zeros(n, dtype=np.int64)
    m = data.m if rule != BASIC_MSE else 1
    cs = crit.contrasts if crit.contrasts is not None else ContrastSet.all_pairs(data.m)
    pm = np.array([a for a, _ in cs.pairs], dtype=np.int64)
    pl = np.array([b for _, b in cs.pairs], dtype=np.int64)
    pw = np.array(cs.weights, dtype=np.float64)
    if rule == ONEF_MCE:
        yt = data.y_tilde[node_obs] - center
    else:
        yt = np.zeros((n, 1))
    col = data.x[node_obs, feature]
    cat_order = None
    if data.categorical[feature]:
        codes = col.astype(np.int64)
        present = np.unique(codes)
        # order present levels by their pooled mean outcome; ties by level code
        means = np.array([yc[codes == c].mean() for c in present])
        cat_order = present[np.lexsort((present, means))]
        rank = np.empty(int(present.max()) + 1)
        rank[cat_order] = np.arange(cat_order.size)
        key = rank[codes]
    else:
        key = col
    order = np.argsort(key, kind="stable")
    keys = np.ascontiguousarray(key[order])
    out = np.empty(max(n - 1, 0))
    use_lam = lam if crit.penalty else 0.0
    _kernels.scan_sorted(keys, np.ascontiguousarray(d[order]), np.ascontiguousarray(yc[order]),
                         np.ascontiguousarray(yt[order]), m, pm, pl, pw, RULE_CODES[rule],
                         float(use_lam), cfg.min_leaf, cfg.min_leaf_per_treatment,
                         cfg.min_daughter_share, out)
    return out, keys, cat_order


def _scan_args(data: TreeData, cfg: TreeConfig, lam: float):
    crit = cfg.criterion
    rule = crit.rule
    cs = crit.contrasts if crit.contrasts is not None else ContrastSet.all_pairs(max(data.m, 2))
    pm = np.array([a for a, _ in cs.pairs], dtype=np.int64)
    pl = np.array([b for _, b in cs.pairs], dtype=np.int64)
    pw = np.array(cs.weights, dtype=np.float64)
    if rule == ONEF_MCE:
        yt = data.y_tilde
    else:
        yt = np.zeros((data.y.size, 1))
    m = data.m if rule != BASIC_MSE else 1
    use_lam = float(lam) if crit.penalty else 0.0
    return (m, pm, pl, pw, RULE_CODES[rule], use_lam, cfg.min_leaf,
            cfg.min_leaf_per_treatment, float(cfg.min_daughter_share)), yt


def best_split(node_obs: np.ndarray, data: TreeData, cfg: TreeConfig, lam: float,
               rng: np.random.Generator | None = None, features=None) -> Split | None:
    """Feasible split minimising criterion plus penalty, or None.

    Candidate features are drawn from ``rng`` unless ``features`` is given.
    Ordered thresholds are midpoints between consecutive distinct values.
    Values within a relative 1e-10 of the minimum count as ties, resolved by
    lowest feature index, then lowest threshold (categorical: shortest
    prefix of the mean-ordered levels).
    """
    node_obs = np.ascontiguousarray(node_obs, dtype=np.int64)
    n = node_obs.size
    if n < 2 * cfg.min_leaf or n < 2:
        return None
    if features is None:
        features = draw_features(data.x.shape[1], cfg.feature_poisson_mean, rng)
    features = np.unique(np.asarray(features, dtype=np.int64))
    args, yt = _scan_args(data, cfg, lam)
    n_lev = max(1, int(data.n_levels.max()) if data.n_levels.size else 1)
    tab = np.zeros(n_lev, dtype=np.int8)
    j, thr, val = _kernels._node_split(data.x, data.d, data.y, yt, data.categorical,
                                       data.n_levels, node_obs, features, *args, tab)
    if j < 0:
        return None
    if data.categorical[j]:
        return Split(int(j), np.nan, tuple(int(c) for c in np.flatnonzero(tab)), float(val))
    return Split(int(j), float(thr), None, float(val))


def is_degenerate(d_build: np.ndarray, m: int, rule: str) -> bool:
    """A joint-rule tree needs every treatment among its building observations."""
    if rule == BASIC_MSE:
        return d_build.size == 0
    return bool(np.any(np.bincount(d_build, minlength=m) == 0))


def grow_tree(data: TreeData, build: np.ndarray, cfg: TreeConfig, lam: float,
              rng: np.random.Generator, populate=None, stream: int = 0) -> Tree:
    """Recursively split the ``build`` observations until no split is feasible.

    Nodes are expanded depth first (left before right); candidate features
    are redrawn at every node.
    """
    build = np.ascontiguousarray(build, dtype=np.int64)
    p = data.x.shape[1]
    cap = 2 * (build.size // max(cfg.min_leaf, 1)) + 3
    u = rng.random((cap, p + 1))
    degenerate = is_degenerate(data.d[build], data.m, cfg.criterion.rule)
    if degenerate:
        feat = np.full(1, -1, dtype=np.int64)
        thr = np.full(1, np.nan)
        lch = np.full(1, -1, dtype=np.int64)
        rch = np.full(1, -1, dtype=np.int64)
        levels = {}
    else:
        args, yt = _scan_args(data, cfg, lam)
        max_depth = -1 if cfg.max_depth is None else int(cfg.max_depth)
        feat, thr, lch, rch, tab, _ = _kernels.grow(
            data.x, data.d, data.y, yt, data.categorical, data.n_levels, build, *args,
            max_depth, float(cfg.feature_poisson_mean), u)
        levels = {int(k): tuple(int(c) for c in np.flatnonzero(tab[k]))
                  for k in np.flatnonzero((feat >= 0) & data.categorical[np.maximum(feat, 0)])}
    leaf_of_node = np.full(feat.size, -1, dtype=np.int64)
    leaves = np.flatnonzero(feat < 0)
    leaf_of_node[leaves] = np.arange(leaves.size)
    return Tree(feat, thr, lch, rch, levels, leaf_of_node,
                np.asarray(data.n_levels, dtype=np.int64), build,
                None if populate is None else np.asarray(populate, dtype=np.int64),
                degenerate, stream)


def populate_honest(tree: Tree, x_b: np.ndarray, d_b: np.ndarray, y_b: np.ndarray,
                    m: int) -> PopulatedTree:
    """Route sample B through ``tree`` and record per-leaf treatment means.

    Only the rows in ``tree.populate`` are used when it is set.
    """
    leaf = tree.apply(x_b)
    if tree.populate is not None:
        keep = np.zeros(leaf.size, dtype=bool)
        keep[tree.populate] = True
        leaf = np.where(keep, leaf, -1)
    return _fill(tree, leaf, np.asarray(d_b, dtype=np.int64), np.asarray(y_b, float), m)


def _fill(tree, leaf, d_b, y_b, m):
    nl = tree.n_leaves
    inside = leaf >= 0
    flat = leaf[inside] * m + d_b[inside]
    counts = np.bincount(flat, minlength=nl * m).reshape(nl, m)
    sums = np.bincount(flat, weights=y_b[inside], minlength=nl * m).reshape(nl, m)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return PopulatedTree(tree, leaf.astype(np.int64), counts.astype(np.int64), means)


@dataclass(frozen=True, eq=False)
class TreeBank:
    """Trees packed into flat arrays for compiled routing and weight sums."""

    node_off: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    cat_off: np.ndarray
    cat_len: np.ndarray
    cat_tab: np.ndarray
    leaf_of_node: np.ndarray
    leaf_off: np.ndarray
    ptr: np.ndarray | None = None
    members: np.ndarray | None = None
    counts: np.ndarray | None = None
    means: np.ndarray | None = None

    @property
    def n_trees(self) -> int:
        return self.node_off.size - 1

    @classmethod
    def from_trees(cls, trees, populated=None) -> "TreeBank":
        node_off = np.zeros(len(trees) + 1, dtype=np.int64)
        feats, thrs, lefts, rights, lon, coff, clen, tabs = [], [], [], [], [], [], [], []
        leaf_off = np.zeros(len(trees) + 1, dtype=np.int64)
        tab_pos = 0
        for t, tr in enumerate(trees):
            node_off[t + 1] = node_off[t] + tr.n_nodes
            leaf_off[t + 1] = leaf_off[t] + tr.n_leaves
            feats.append(tr.feature)
            thrs.append(tr.threshold)
            lefts.append(tr.left)
            rights.append(tr.right)
            lon.append(tr.leaf_of_node)
            co = np.zeros(tr.n_nodes, dtype=np.int64)
            cl = np.zeros(tr.n_nodes, dtype=np.int64)
            for k, levs in sorted(tr.left_levels.items()):
                size = max(int(tr.n_levels[tr.feature[k]]), max(levs) + 1)
                tab = np.zeros(size, dtype=np.int8)
                tab[list(levs)] = 1
                co[k] = tab_pos
                cl[k] = size
                tabs.append(tab)
                tab_pos += size
            coff.append(co)
            clen.append(cl)

        def cat(parts, dtype):
            return np.ascontiguousarray(np.concatenate(parts) if parts else np.zeros(0), dtype=dtype)

        bank = dict(node_off=node_off, feature=cat(feats, np.int64),
                    threshold=cat(thrs, np.float64), left=cat(lefts, np.int64),
                    right=cat(rights, np.int64), cat_off=cat(coff, np.int64),
                    cat_len=cat(clen, np.int64), cat_tab=cat(tabs, np.int8),
                    leaf_of_node=cat(lon, np.int64), leaf_off=leaf_off)
        if populated is not None:
            ptr_parts, mem_parts = [np.zeros(1, dtype=np.int64)], []
            total = 0
            for pt in populated:
                leaf = pt.leaf_of_b
                inside = np.flatnonzero(leaf >= 0)
                order = inside[np.argsort(leaf[inside], kind="stable")]
                sizes = np.bincount(leaf[inside], minlength=pt.tree.n_leaves)
                ptr_parts.append(total + np.cumsum(sizes))
                total += int(sizes.sum())
                mem_parts.append(order)
            bank["ptr"] = cat(ptr_parts, np.int64)
            bank["members"] = cat(mem_parts, np.int64)
            bank["counts"] = np.ascontiguousarray(np.concatenate([pt.counts for pt in populated]),
                                                  dtype=np.float64)
            bank["means"] = np.ascontiguousarray(np.concatenate([pt.means for pt in populated]))
        return cls(**bank)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Leaf index (local to each tree) of every row, shape (n_trees, n)."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if self.n_trees == 0:
            return np.zeros((0, x.shape[0]), dtype=np.int64)
        return _kernels.route_all(x, self.node_off, self.feature, self.threshold, self.left,
                                  self.right, self.cat_off, self.cat_len, self.cat_tab,
                                  self.leaf_of_node)
