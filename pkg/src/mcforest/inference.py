"""Weights-based variances and covariances, t-tests and Wald tests.

An estimate ``theta = sum_i omega_i y_i`` is a difference of weighted means
over disjoint treatment groups of sample B. Each group's part
``(1/N_d) sum_i w_i y_i`` with ``w_i = N_d omega_i`` gets the variance

    (1/N_d^2) sum w_i^2 s2(w_i) + 1/(N_d (N_d - 1)) sum [w_i mu(w_i) - mean]^2

where ``mu`` and ``s2`` are k-nearest-neighbour means and variances of y in
weight space; the group variances are summed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True, eq=False)
class MomentEstimates:
    """Conditional mean and variance of y given the weight, per observation."""

    mu: np.ndarray
    sigma2: np.ndarray
    k: int


@dataclass(frozen=True)
class EffectEstimate:
    contrast: tuple
    level: str
    point: float
    variance: float
    group: object = None
    n_members: int = 0

    @property
    def std_err(self) -> float:
        return float(np.sqrt(max(self.variance, 0.0)))

    @property
    def p_value(self) -> float:
        return t_test(self, 0.0)

    @property
    def t_stat(self) -> float:
        se = self.std_err
        return self.point / se if se > 0 else (0.0 if self.point == 0 else np.copysign(np.inf, self.point))


def default_k(n: int) -> int:
    """Neighbourhood size ``ceil(2 sqrt(n))`` capped at ``n``."""
    return int(min(n, max(2, np.ceil(2.0 * np.sqrt(n)))))


def _windows(w: np.ndarray, y: np.ndarray, k: int):
    """Row-wise k-NN window means and variances in weight space.

    ``w`` has shape (r, n). Rows are ranked by weight with ties broken by
    index; observation i's window is the ``k`` consecutive ranks centred on
    its own rank, shifted inwards at the ends.
    """
    r, n = w.shape
    order = np.argsort(w, axis=1, kind="stable")
    yc = y - y.mean()
    ys = yc[order]
    c1 = np.zeros((r, n + 1))
    c2 = np.zeros((r, n + 1))
    np.cumsum(ys, axis=1, out=c1[:, 1:])
    np.cumsum(ys * ys, axis=1, out=c2[:, 1:])
    start = np.clip(np.arange(n) - (k - 1) // 2, 0, n - k)
    s1 = c1[:, start + k] - c1[:, start]
    s2 = c2[:, start + k] - c2[:, start]
    mean_sorted = s1 / k
    var_sorted = np.maximum(s2 - s1 * mean_sorted, 0.0) / (k - 1)
    mu = np.empty((r, n))
    s2o = np.empty((r, n))
    rows = np.arange(r)[:, None]
    mu[rows, order] = mean_sorted + y.mean()
    s2o[rows, order] = var_sorted
    return mu, s2o


def knn_moments(w, y, k: int | None = None) -> MomentEstimates:
    """k-NN moments of ``y`` given the weights ``w`` (only their ranks matter)."""
    w = np.asarray(w, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if w.shape != (n,):
        raise ValueError("weights and outcomes differ in length")
    k = default_k(n) if k is None else int(k)
    if k < 2 or k > n:
        raise ValueError(f"need 2 <= k <= {n}, got {k}")
    mu, s2 = _windows(w.reshape(1, -1), y, k)
    return MomentEstimates(mu[0], s2[0], k)


def variance(w_hat, moments: MomentEstimates) -> float:
    """Variance estimate of ``(1/N) sum w_hat_i y_i`` from k-NN moments."""
    w_hat = np.asarray(w_hat, dtype=np.float64)
    n = w_hat.size
    if n < 2 or not np.any(w_hat):
        return 0.0
    first = np.sum(w_hat ** 2 * moments.sigma2) / n ** 2
    a = w_hat * moments.mu
    second = np.sum((a - a.mean()) ** 2) / (n * (n - 1))
    return float(first + second)


def covariance(w_g, w_h, moments_g: MomentEstimates, moments_h: MomentEstimates) -> float:
    """Bilinear counterpart of :func:`variance` for two weight vectors on one sample."""
    w_g = np.asarray(w_g, dtype=np.float64)
    w_h = np.asarray(w_h, dtype=np.float64)
    n = w_g.size
    if n < 2:
        return 0.0
    first = np.sum(w_g * w_h * 0.5 * (moments_g.sigma2 + moments_h.sigma2)) / n ** 2
    a = w_g * moments_g.mu
    b = w_h * moments_h.mu
    second = np.sum((a - a.mean()) * (b - b.mean())) / (n * (n - 1))
    return float(first + second)


def _group_rows(omega: np.ndarray, y: np.ndarray, d: np.ndarray, k: int | None):
    """Per treatment group: (index, w_hat rows, moments mu, sigma2)."""
    out = []
    for t in np.unique(d):
        idx = np.flatnonzero(d == t)
        sub = omega[:, idx]
        if idx.size < 2 or not np.any(sub):
            continue
        kk = default_k(idx.size) if k is None else min(int(k), idx.size)
        w_hat = idx.size * sub
        mu, s2 = _windows(w_hat, y[idx], kk)
        out.append((idx, w_hat, mu, s2))
    return out


def effect_variances(omega, y, d, k: int | None = None) -> np.ndarray:
    """Variance of each row estimate ``omega[r] @ y``, summed over treatment groups.

    ``omega`` holds weight vectors over sample B as rows; ``d`` are the
    sample-B treatments. ``k`` of None uses ``ceil(2 sqrt(N_d))`` per group.
    """
    omega = np.atleast_2d(np.asarray(omega, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    d = np.asarray(d)
    total = np.zeros(omega.shape[0])
    for idx, w_hat, mu, s2 in _group_rows(omega, y, d, k):
        n = idx.size
        first = np.sum(w_hat ** 2 * s2, axis=1) / n ** 2
        a = w_hat * mu
        second = np.sum((a - a.mean(axis=1, keepdims=True)) ** 2, axis=1) / (n * (n - 1))
        total += first + second
    return total


def effect_covariance(omega, y, d, k: int | None = None) -> np.ndarray:
    """Covariance matrix of the row estimates of ``omega`` (treatment groups summed)."""
    omega = np.atleast_2d(np.asarray(omega, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    d = np.asarray(d)
    g = omega.shape[0]
    cov = np.zeros((g, g))
    for idx, w_hat, mu, s2 in _group_rows(omega, y, d, k):
        n = idx.size
        first = (w_hat[:, None, :] * w_hat[None, :, :]
                 * 0.5 * (s2[:, None, :] + s2[None, :, :])).sum(axis=2) / n ** 2
        a = w_hat * mu
        a = a - a.mean(axis=1, keepdims=True)
        cov += first + a @ a.T / (n * (n - 1))
    return cov


def t_test(e: EffectEstimate, null: float = 0.0) -> float:
    """Two-sided normal p-value of ``(point - null) / std_err``."""
    se = e.std_err
    diff = e.point - null
    if se == 0.0:
        return 1.0 if diff == 0 else 0.0
    return float(2.0 * stats.norm.sf(abs(diff) / se))


def difference_test(points, cov, i: int, j: int) -> tuple[float, float]:
    """Estimate and p-value of ``theta_i - theta_j``."""
    diff = float(points[i] - points[j])
    var = float(cov[i, i] + cov[j, j] - 2.0 * cov[i, j])
    e = EffectEstimate((), "DIFF", diff, max(var, 0.0))
    return diff, e.p_value


def clamp_psd(cov) -> np.ndarray:
    """Symmetrise and set negative eigenvalues to zero."""
    cov = np.asarray(cov, dtype=np.float64)
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    return (vecs * np.maximum(vals, 0.0)) @ vecs.T


def wald_equality(estimates, cov) -> tuple[float, int, float]:
    """Wald test that all G estimates are equal.

    ``estimates`` are EffectEstimates or plain numbers. Returns
    ``(stat, df, p)``; ``df`` drops below G - 1 when the covariance of the
    differences is rank deficient (relative eigenvalue tolerance 1e-10).
    """
    theta = np.array([e.point if isinstance(e, EffectEstimate) else float(e) for e in estimates])
    g = theta.size
    if g < 2:
        raise ValueError("the Wald test needs at least two estimates")
    cov = np.asarray(cov, dtype=np.float64)
    if cov.shape != (g, g):
        raise ValueError(f"covariance must be {g}x{g}")
    r = np.hstack([-np.ones((g - 1, 1)), np.eye(g - 1)])
    diff = r @ theta
    q = r @ clamp_psd(cov) @ r.T
    vals, vecs = np.linalg.eigh(0.5 * (q + q.T))
    top = vals.max() if vals.size else 0.0
    keep = vals > 1e-10 * top if top > 0 else np.zeros(vals.size, dtype=bool)
    df = int(keep.sum())
    proj = vecs[:, keep].T @ diff
    if df == 0:
        if np.allclose(diff, 0.0, atol=1e-12 * (1.0 + np.abs(theta).max())):
            return 0.0, 0, 1.0
        return np.inf, g - 1, 0.0
    stat = float(np.sum(proj ** 2 / vals[keep]))
    return stat, df, float(stats.chi2.sf(stat, df))
