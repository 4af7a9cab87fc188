"""Common support from forest-implied propensity scores, and covariate balance."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .aggregation import Population, ate_weights, mean_weights, sample_b
from .forest import Forest


def propensity_from_forest(f: Forest, x) -> np.ndarray:
    """Treatment shares of sample B in each point's leaves, averaged over trees.

    Returns shape (n, m). Leaves without sample-B members are skipped; a
    point no tree can score gets the overall sample-B shares. For the
    per-treatment ``basic`` forests the first forest's trees are used with
    all of sample B routed through them.
    """
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    m = f.m
    shares_b = np.bincount(f.d_b, minlength=m) / f.n_b
    total = np.zeros((x.shape[0], m))
    used = np.zeros(x.shape[0])
    if f.config.per_treatment:
        from .tree import TreeBank, populate_honest
        trees = f.trees(0)
        pops = [populate_honest(_open(t), f.x_b, f.d_b, f.y_b, m) for t in trees]
        bank = TreeBank.from_trees(trees, pops)
    else:
        bank = f.banks[0]
    leaf = bank.apply(x)
    for t in range(bank.n_trees):
        c = bank.counts[bank.leaf_off[t] + leaf[t]]
        size = c.sum(axis=1)
        ok = size > 0
        total[ok] += c[ok] / size[ok, None]
        used += ok
    out = np.tile(shares_b, (x.shape[0], 1))
    have = used > 0
    out[have] = total[have] / used[have, None]
    return out


def _open(tree):
    import dataclasses
    return dataclasses.replace(tree, populate=None)


@dataclass(frozen=True)
class SupportReport:
    n: int
    n_discarded: int
    lo: float
    hi: float

    @property
    def share_discarded(self) -> float:
        return self.n_discarded / self.n if self.n else 0.0


def trim_support(f: Forest, x, bounds=(0.05, 0.95)):
    """Mask of points whose every treatment share lies in ``[lo, hi]``.

    Raises
    ------
    ValueError
        If the bounds are invalid or every point is discarded.
    """
    lo, hi = (float(b) for b in bounds)
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError("support bounds must satisfy 0 <= lo < hi <= 1")
    ps = propensity_from_forest(f, x)
    keep = np.all((ps >= lo) & (ps <= hi), axis=1)
    report = SupportReport(keep.size, int((~keep).sum()), lo, hi)
    if keep.size and not keep.any():
        raise ValueError("common-support trimming discarded every observation")
    return keep, report


def standardized_diff(x_col, d, m: int, l: int) -> float:
    """``100 |mean_m - mean_l| / sqrt((var_m + var_l) / 2)`` in percent (ddof 1)."""
    x_col = np.asarray(x_col, dtype=np.float64)
    d = np.asarray(d)
    a, b = x_col[d == m], x_col[d == l]
    if a.size == 0 or b.size == 0:
        raise ValueError("both treatment groups must be nonempty")
    va = a.var(ddof=1) if a.size > 1 else 0.0
    vb = b.var(ddof=1) if b.size > 1 else 0.0
    gap = abs(a.mean() - b.mean())
    scale = np.sqrt(0.5 * (va + vb))
    if scale == 0.0:
        return 0.0 if gap == 0.0 else np.inf
    return float(100.0 * gap / scale)


def post_estimation_balance(f: Forest, x_col, contrast, delta=None,
                            pop: Population | None = None) -> float:
    """ATE weights applied to a sample-B covariate instead of the outcome."""
    w = ate_weights(f, contrast, delta, pop)
    return float(w.dense() @ np.asarray(x_col, dtype=np.float64))


@dataclass(frozen=True)
class BalanceRow:
    variable: str
    mean_m: float
    mean_l: float
    difference: float
    std_diff: float
    post_difference: float


def balance_table(f: Forest, contrast, columns=None, pop: Population | None = None) -> list:
    """Pre-estimation means, differences, standardised differences and post-estimation gaps.

    ``columns`` maps names to sample-B columns (default: all features).
    """
    mm, ll = contrast
    pop = sample_b(f) if pop is None else pop
    w = mean_weights(f, pop.x, contrast)
    columns = columns if columns is not None else {n: f.x_b[:, i]
                                                   for i, n in enumerate(f.feature_names)}
    rows = []
    for name, col in columns.items():
        col = np.asarray(col, dtype=np.float64)
        a, b = col[f.d_b == mm].mean(), col[f.d_b == ll].mean()
        rows.append(BalanceRow(name, float(a), float(b), float(a - b),
                               standardized_diff(col, f.d_b, mm, ll), float(w @ col)))
    return rows


def write_balance(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["variable", "mean_m", "mean_l", "difference", "std_diff_pct",
                     "post_estimation_difference"])
        for r in rows:
            wr.writerow([r.variable, repr(r.mean_m), repr(r.mean_l), repr(r.difference),
                         repr(r.std_diff), repr(r.post_difference)])
