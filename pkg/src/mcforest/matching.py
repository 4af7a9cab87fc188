"""Nearest-neighbour matched outcomes for the MCE splitting criterion.

For every observation and every treatment other than its own, the outcome of
the closest observation receiving that treatment is recorded. Closeness is a
diagonal Mahalanobis distance: squared feature differences weighted by the
inverse feature variances.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

_CHUNK_CELLS = 1 << 21


def feature_scales(x: np.ndarray) -> np.ndarray:
    """Inverse sample variances (ddof=1) of the columns of ``x``.

    Constant columns get 0 so that they carry no distance.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("need at least two rows to compute variances")
    var = x.var(axis=0, ddof=1)
    inv = np.zeros_like(var)
    pos = var > 0
    inv[pos] = 1.0 / var[pos]
    return inv


def match_indices(x: np.ndarray, d: np.ndarray, m: int, inv_var: np.ndarray) -> np.ndarray:
    """Row index of the matched neighbour for each (row, treatment) pair.

    Entry ``[i, k]`` is ``i`` itself when ``d[i] == k``; otherwise it is the
    treatment-``k`` row minimising the scaled squared distance, with ties
    going to the lowest row index.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    out = np.empty((n, m), dtype=np.int64)
    inv_var = np.asarray(inv_var, dtype=np.float64)
    for k in range(m):
        cand = np.flatnonzero(d == k)
        if cand.size == 0:
            raise ValueError(f"treatment {k} has no observations to match to")
        xc = x[cand]
        step = max(1, _CHUNK_CELLS // max(1, cand.size * x.shape[1]))
        for lo in range(0, n, step):
            hi = min(n, lo + step)
            # raw differences weighted after squaring: no rescaling step to round away near ties
            diff = x[lo:hi, None, :] - xc[None, :, :]
            dist = np.sum(diff * diff * inv_var, axis=2)
            out[lo:hi, k] = cand[np.argmin(dist, axis=1)]
        own = d == k
        out[own, k] = np.flatnonzero(own)
    return out


def match_neighbors(x: np.ndarray, d: np.ndarray, y: np.ndarray, m: int,
                    inv_var: np.ndarray | None = None) -> np.ndarray:
    """Matched outcome table ``y_tilde`` of shape (n, m).

    ``y_tilde[i, d[i]] == y[i]``; other entries are outcomes of the nearest
    neighbour in that treatment.
    """
    if inv_var is None:
        inv_var = feature_scales(x)
    idx = match_indices(x, d, m, inv_var)
    return np.asarray(y, dtype=np.float64)[idx]


def export_matched(path, y_tilde: np.ndarray, row_ids=None) -> None:
    """Write the matched outcome table as CSV (row, y_0, ..., y_{m-1})."""
    y_tilde = np.asarray(y_tilde)
    rows = np.arange(y_tilde.shape[0]) if row_ids is None else np.asarray(row_ids)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row"] + [f"y_tilde_{k}" for k in range(y_tilde.shape[1])])
        for r, vals in zip(rows, y_tilde):
            w.writerow([int(r)] + [repr(float(v)) for v in vals])
