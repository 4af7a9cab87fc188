"""Leaf-level splitting criteria.

All criteria are minimised. For a candidate split the value is summed over
the two daughters and over the treatment contrasts:

* ``basic_mse`` -- total squared error of a single (pooled) outcome mean,
* ``onef``      -- per-treatment leaf MSEs, ``MSE_m + MSE_l``,
* ``onef_mce``  -- ``MSE_m + MSE_l - 2 MCE(m, l)`` with matched outcomes,
* ``onef_vart`` -- negated size-weighted squared effect in each daughter.

The propensity penalty is added on top of any joint rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

BASIC_MSE = "basic_mse"
ONEF = "onef"
ONEF_MCE = "onef_mce"
ONEF_VART = "onef_vart"
RULES = (BASIC_MSE, ONEF, ONEF_MCE, ONEF_VART)
RULE_CODES = {BASIC_MSE: 0, ONEF: 1, ONEF_MCE: 2, ONEF_VART: 3}


@dataclass(frozen=True)
class ContrastSet:
    """Treatment pairs ``(m, l)`` with ``m > l`` and their criterion weights."""

    pairs: tuple
    weights: tuple = ()

    def __post_init__(self):
        pairs = tuple((int(a), int(b)) for a, b in self.pairs)
        if any(a <= b for a, b in pairs):
            raise ValueError("contrast pairs must have m > l")
        if len(set(pairs)) != len(pairs):
            raise ValueError("contrast pairs must be distinct")
        weights = tuple(float(w) for w in self.weights) or (1.0,) * len(pairs)
        if len(weights) != len(pairs) or any(w <= 0 for w in weights):
            raise ValueError("need one positive weight per contrast")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def all_pairs(cls, m: int) -> "ContrastSet":
        return cls(tuple((b, a) for a, b in combinations(range(m), 2)))


@dataclass(frozen=True)
class CriterionConfig:
    """Splitting rule, optional propensity penalty and contrasts.

    ``penalty_lambda`` of None means "use the default": ``lambda_scale *
    Var(Y)`` for MSE/MCE rules and ``100 * lambda_scale * sum of squared
    treatment-mean differences`` for ``onef_vart``.
    """

    rule: str = ONEF_MCE
    penalty: bool = False
    penalty_lambda: float | None = None
    lambda_scale: float = 1.0
    contrasts: ContrastSet | None = None

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown splitting rule {self.rule!r}")
        if self.rule == BASIC_MSE and self.penalty:
            raise ValueError("basic_mse does not take a penalty")
        if self.penalty_lambda is not None:
            lam = float(self.penalty_lambda)
            if not np.isfinite(lam) or lam < 0:
                raise ValueError("penalty_lambda must be finite and >= 0")


def default_lambda(rule: str, y: np.ndarray, d: np.ndarray, contrasts: ContrastSet,
                   scale: float = 1.0) -> float:
    """Penalty weight from the tree-building outcomes."""
    y = np.asarray(y, dtype=np.float64)
    if rule == ONEF_VART:
        means = np.array([y[d == k].mean() for k in range(int(d.max()) + 1)])
        gap = sum((means[a] - means[b]) ** 2 for a, b in contrasts.pairs)
        return 100.0 * scale * float(gap)
    return scale * float(y.var())


@dataclass(frozen=True, eq=False)
class NodeStats:
    """Sufficient statistics of one leaf.

    ``mce_sum[m, l]`` holds the sum over leaf members with treatment m or l of
    ``(mean_m - y_tilde_m) * (mean_l - y_tilde_l)``; ``mce_count[m, l]`` the
    number of such members. Means of empty treatment cells are NaN.
    """

    counts: np.ndarray
    means: np.ndarray
    ssr: np.ndarray
    mce_sum: np.ndarray = field(default=None)
    mce_count: np.ndarray = field(default=None)

    @property
    def size(self) -> int:
        return int(self.counts.sum())

    @property
    def shares(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    @classmethod
    def from_obs(cls, y, d, m: int, y_tilde=None) -> "NodeStats":
        y = np.asarray(y, dtype=np.float64)
        d = np.asarray(d)
        counts = np.bincount(d, minlength=m).astype(np.int64)
        means = np.full(m, np.nan)
        ssr = np.zeros(m)
        for k in range(m):
            yk = y[d == k]
            if yk.size:
                means[k] = yk.mean()
                ssr[k] = np.sum((means[k] - yk) ** 2)
        mce_sum = mce_count = None
        if y_tilde is not None:
            y_tilde = np.asarray(y_tilde, dtype=np.float64)
            mce_sum = np.zeros((m, m))
            mce_count = np.zeros((m, m), dtype=np.int64)
            for a in range(m):
                for b in range(m):
                    if a == b:
                        continue
                    sel = (d == a) | (d == b)
                    mce_count[a, b] = int(sel.sum())
                    if counts[a] and counts[b]:
                        mce_sum[a, b] = np.sum((means[a] - y_tilde[sel, a])
                                               * (means[b] - y_tilde[sel, b]))
        return cls(counts, means, ssr, mce_sum, mce_count)


def leaf_mse(stats: NodeStats, d: int) -> float:
    """Mean squared deviation of treatment-``d`` outcomes from their leaf mean."""
    n = stats.counts[d]
    if n < 1:
        raise ValueError(f"empty treatment cell {d}: split infeasible")
    return float(stats.ssr[d] / n)


def leaf_mce(stats: NodeStats, m: int, l: int) -> float:
    """Matched mean correlated error of the treatment-m and treatment-l means."""
    if stats.mce_sum is None:
        raise ValueError("NodeStats built without matched outcomes")
    n = stats.mce_count[m, l]
    if n < 1:
        raise ValueError("leaf holds no observation with treatment m or l")
    return float(stats.mce_sum[m, l] / n)


def _contrast_set(cfg: CriterionConfig, m: int) -> ContrastSet:
    return cfg.contrasts if cfg.contrasts is not None else ContrastSet.all_pairs(m)


def _feasible(stats: NodeStats, pairs) -> bool:
    return all(stats.counts[a] > 0 and stats.counts[b] > 0 for a, b in pairs)


def mce_criterion(left: NodeStats, right: NodeStats, cfg: CriterionConfig) -> float:
    """Sum over daughters and contrasts of ``MSE_m + MSE_l - 2 MCE(m, l)``.

    Under rule ``onef`` the MCE term is dropped. Returns ``inf`` when a
    daughter has an empty treatment cell.
    """
    m = left.counts.size
    cs = _contrast_set(cfg, m)
    total = 0.0
    for side in (left, right):
        if not _feasible(side, cs.pairs):
            return np.inf
        for (a, b), w in zip(cs.pairs, cs.weights):
            term = leaf_mse(side, a) + leaf_mse(side, b)
            if cfg.rule == ONEF_MCE:
                term -= 2.0 * leaf_mce(side, a, b)
            total += w * term
    return total


def vart_criterion(left: NodeStats, right: NodeStats, cfg: CriterionConfig) -> float:
    """``-sum_daughters N * sum_contrasts w * (mean_m - mean_l)^2``."""
    m = left.counts.size
    cs = _contrast_set(cfg, m)
    total = 0.0
    for side in (left, right):
        if not _feasible(side, cs.pairs):
            return np.inf
        het = sum(w * (side.means[a] - side.means[b]) ** 2
                  for (a, b), w in zip(cs.pairs, cs.weights))
        total -= side.size * het
    return total


def basic_criterion(left: NodeStats, right: NodeStats) -> float:
    """Total squared error around the pooled daughter means."""
    total = 0.0
    for side in (left, right):
        if side.size == 0:
            return np.inf
        mean = np.nansum(side.means * side.counts) / side.size
        # pooled SSR = within-cell SSR + between-cell part
        total += float(side.ssr.sum() + np.nansum(side.counts * (side.means - mean) ** 2))
    return total


def penalty(left: NodeStats, right: NodeStats, lam: float, m_count: int | None = None) -> float:
    """Propensity-homogeneity penalty in ``[0, lam]``.

    Zero when the daughters separate the treatments perfectly, ``lam`` when
    their treatment shares coincide.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    m_count = left.counts.size if m_count is None else m_count
    gap = np.sum((left.shares - right.shares) ** 2)
    return float(lam * (1.0 - gap / m_count))


def split_value(left: NodeStats, right: NodeStats, cfg: CriterionConfig,
                lam: float = 0.0) -> float:
    """Criterion of ``cfg.rule`` plus the penalty when enabled."""
    if cfg.rule == BASIC_MSE:
        return basic_criterion(left, right)
    if cfg.rule == ONEF_VART:
        val = vart_criterion(left, right, cfg)
    else:
        val = mce_criterion(left, right, cfg)
    if cfg.penalty and np.isfinite(val):
        val += penalty(left, right, lam)
    return val
