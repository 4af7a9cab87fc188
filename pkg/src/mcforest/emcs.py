"""Monte Carlo harness: synthetic populations, replications and quality metrics.

Synthetic population law (``p >= 8`` features):

* ``female`` ~ Bernoulli(0.44)
* ``age`` integer in 24..55, density falling linearly so the youngest year is
  three times as likely as the oldest
* ``educ`` ordered 0..3
* ``earnings``: log-normal in thousands, rising with age and education
* ``z1, z2, z3``: standard normals with pairwise correlation 0.5
* ``sector``: categorical with 5 levels
* ``u1 ...``: independent uniforms filling up to ``p`` columns

Selection is logistic in the standardised features. The original process
has mean propensity ``base_share``; its values drive the sine effect. For
treatment assignment the intercept is shifted by bisection until the mean
propensity equals ``target_share``. The untreated outcome counts months out
of 33: ``Binomial(33, expit(index + noise))`` with an index that shares
several features with selection and logistic-scale noise of sd
``outcome_noise``.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import _parallel
from .aggregation import Population as EvalPopulation
from .aggregation import evaluate_population
from .data import CATEGORICAL, ORDERED, Dataset, encode_rows
from .errors import MCForestError
from .forest import ForestConfig, train_forest

log = logging.getLogger(__name__)

RANDOM = "random"
LOGIT = "logit"
ZERO = "zero"
SINE = "sine"
LINEAR = "linear_feature"
OUTCOME_MAX = 33

_STREAM_POPULATION = 10
_STREAM_REPLICATION = 11

# selection coefficients on the standardised named features
_SELECTION_BETA = {"female": 0.3, "age": -0.4, "educ": 0.3, "earnings": 0.5,
                   "z1": 0.4, "z2": -0.3, "z3": 0.2, "u1": 0.2}
_SECTOR_SELECTION = np.array([-0.3, -0.15, 0.0, 0.15, 0.3])
_SECTOR_OUTCOME = np.array([0.2, -0.1, 0.0, 0.1, -0.2])


@dataclass(frozen=True)
class DgpConfig:
    """Population law, selection process and true effect law.

    ``selection_strength`` scales all logit coefficients. ``effect_feature``
    names the column of the linear effect. ``alpha`` is the sd of the IATE.
    """

    p: int = 12
    selection: str = LOGIT
    target_share: float = 0.5
    base_share: float = 0.15
    selection_strength: float = 1.0
    outcome_noise: float = 2.0
    effect: str = SINE
    alpha: float = 2.0
    effect_feature: str = "earnings"
    population_size: int = 20000
    validation_size: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.p < 8:
            raise ValueError("the synthetic population needs p >= 8")
        if self.selection not in (RANDOM, LOGIT):
            raise ValueError(f"unknown selection {self.selection!r}")
        if self.effect not in (ZERO, SINE, LINEAR):
            raise ValueError(f"unknown effect {self.effect!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not (0.0 < self.target_share < 1.0 and 0.0 < self.base_share < 1.0):
            raise ValueError("target_share and base_share must lie in (0, 1)")
        if self.outcome_noise < 0:
            raise ValueError("outcome_noise must be >= 0")
        if self.validation_size >= self.population_size:
            raise ValueError("validation set must be smaller than the population")


@dataclass(frozen=True, eq=False)
class Population:
    x: np.ndarray
    names: tuple
    kinds: tuple
    propensity: np.ndarray
    y0: np.ndarray
    iate: np.ndarray
    ite: np.ndarray
    validation: np.ndarray
    base_propensity: np.ndarray | None = None

    @property
    def y1(self) -> np.ndarray:
        return self.y0 + self.ite

    @property
    def n(self) -> int:
        return self.y0.size

    def column(self, name: str) -> np.ndarray:
        return self.x[:, self.names.index(name)]

    @property
    def training_pool(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.validation] = False
        return np.flatnonzero(mask)


def _features(p: int, n: int, rng: np.random.Generator):
    female = (rng.random(n) < 0.44).astype(float)
    ages = np.arange(24, 56)
    dens = 3.0 - 2.0 * (ages - 24) / 31.0
    age = rng.choice(ages, size=n, p=dens / dens.sum()).astype(float)
    educ = rng.choice(4, size=n, p=[0.2, 0.45, 0.25, 0.1]).astype(float)
    log_e = 1.0 + 0.02 * (age - 24) + 0.15 * educ - 0.25 * female + 0.5 * rng.normal(size=n)
    earnings = np.round(10.0 * np.exp(log_e), 1)
    cov = np.full((3, 3), 0.5) + 0.5 * np.eye(3)
    z = rng.multivariate_normal(np.zeros(3), cov, size=n, method="cholesky")
    sector = rng.choice(5, size=n, p=[0.3, 0.25, 0.2, 0.15, 0.1]).astype(float)
    cols = [female, age, educ, earnings, z[:, 0], z[:, 1], z[:, 2], sector]
    names = ["female", "age", "educ", "earnings", "z1", "z2", "z3", "sector"]
    for k in range(p - 8):
        cols.append(rng.random(n))
        names.append(f"u{k + 1}")
    kinds = [CATEGORICAL if nm == "sector" else ORDERED for nm in names]
    return np.column_stack(cols), tuple(names), tuple(kinds)


def _standardize(col):
    sd = col.std()
    return (col - col.mean()) / sd if sd > 0 else np.zeros_like(col)


def _expit(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def selection_index(x, names, strength: float) -> np.ndarray:
    idx = np.zeros(x.shape[0])
    for nm, b in _SELECTION_BETA.items():
        if nm in names:
            idx += strength * b * _standardize(x[:, names.index(nm)])
    sector = x[:, names.index("sector")].astype(int)
    return idx + strength * _SECTOR_SELECTION[sector]


def shift_intercept(index: np.ndarray, target: float, tol: float = 1e-10) -> float:
    """Intercept ``c`` with ``mean(expit(index + c)) = target``, found by bisection."""
    def gap(c):
        return _expit(index + c).mean() - target
    lo, hi = -50.0, 50.0
    return float(optimize.bisect(gap, lo, hi, xtol=tol))


def xi(p, p_max):
    """``sin(1.25 pi p / p_max)``."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(np.asarray(p_max) <= 0):
        raise ValueError("p_max must be positive")
    return np.sin(1.25 * np.pi * p / p_max)


def make_iate(xi_values, alpha: float) -> np.ndarray:
    """Standardise to mean 0 and (population) sd ``alpha``."""
    v = np.asarray(xi_values, dtype=np.float64)
    if alpha == 0:
        return np.zeros_like(v)
    sd = v.std()
    if sd == 0:
        raise ValueError("cannot scale a constant effect component to a positive sd")
    return alpha * (v - v.mean()) / sd


def ite_noise(iate, rng: np.random.Generator, u=None, v_star=None):
    """Integer-valued ITE around ``iate``.

    ``u ~ Poisson(1)`` and ``v* ~ U[0, 1]`` are drawn unless given; with
    ``f = iate + u - floor(iate + u)`` the rounding term is ``1 - f`` when
    ``v* <= f`` and ``-f`` otherwise, and the ITE is ``iate + (1 - u) + v``.
    """
    iate = np.asarray(iate, dtype=np.float64)
    if u is None:
        u = rng.poisson(1.0, size=iate.shape)
    if v_star is None:
        v_star = rng.random(size=iate.shape)
    u = np.asarray(u, dtype=np.float64)
    s = iate + u
    f = s - np.floor(s)
    v = np.where(v_star <= f, 1.0 - f, -f)
    # iate + u + v is integral, so this is exact up to rounding of the sum
    return np.round(iate + (1.0 - u) + v)


def gen_population(cfg: DgpConfig, rng: np.random.Generator | None = None) -> Population:
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed,
                                                           spawn_key=(_STREAM_POPULATION,)))
    n = cfg.population_size
    x, names, kinds = _features(cfg.p, n, rng)
    # the unshifted index also defines the effect for random assignment
    idx = selection_index(x, names, max(cfg.selection_strength, 1e-12))
    p_orig = _expit(idx + shift_intercept(idx, cfg.base_share))
    if cfg.selection == RANDOM:
        pscore = np.full(n, cfg.target_share)
    else:
        pscore = _expit(idx + shift_intercept(idx, cfg.target_share))
    col = {nm: x[:, i] for i, nm in enumerate(names)}
    sector = col["sector"].astype(int)
    y_index = (-0.3 - 0.3 * col["female"] + 0.25 * _standardize(col["age"])
               + 0.3 * _standardize(col["earnings"]) + 0.25 * col["z1"] + 0.15 * col["z2"]
               + 0.1 * _standardize(col["educ"]) + _SECTOR_OUTCOME[sector]
               + cfg.outcome_noise * rng.normal(size=n))
    y0 = rng.binomial(OUTCOME_MAX, _expit(y_index)).astype(float)
    if cfg.effect == ZERO or cfg.alpha == 0:
        iate = np.zeros(n)
    elif cfg.effect == SINE:
        iate = make_iate(xi(p_orig, p_orig.max()), cfg.alpha)
    else:
        iate = make_iate(col[cfg.effect_feature], cfg.alpha)
    ite = ite_noise(iate, rng)
    validation = np.sort(rng.choice(n, size=cfg.validation_size, replace=False))
    return Population(x, names, kinds, pscore, y0, iate, ite, validation, p_orig)


def jb_stat(values) -> float:
    """Jarque-Bera statistic ``n/6 (S^2 + (K - 3)^2 / 4)`` with population moments."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 8:
        raise ValueError("the JB statistic needs at least 8 values")
    c = v - v.mean()
    m2 = np.mean(c ** 2)
    if m2 == 0:
        raise ValueError("zero variance")
    s = np.mean(c ** 3) / m2 ** 1.5
    k = np.mean(c ** 4) / m2 ** 2
    return float(v.size / 6.0 * (s ** 2 + (k - 3.0) ** 2 / 4.0))


METRIC_COLUMNS = ("estimator", "level", "n_params", "avg_bias", "avg_abs_bias", "sd_true",
                  "sd_est", "mse", "skewness", "kurtosis", "jb", "std", "se_avg",
                  "se_bias", "se_abs_bias", "coverage90", "replications", "failures")


@dataclass(frozen=True)
class MetricsReport:
    """Quality measures of one parameter level, averaged over its parameters."""

    estimator: str
    level: str
    n_params: int
    avg_bias: float
    avg_abs_bias: float
    sd_true: float
    sd_est: float
    mse: float
    skewness: float
    kurtosis: float
    jb: float
    std: float
    se_avg: float
    se_bias: float
    se_abs_bias: float
    coverage90: float
    replications: int
    failures: int = 0

    @property
    def degenerate(self) -> bool:
        """True when too few replications make spread-based fields undefined."""
        return self.replications < 2

    def row(self) -> list:
        return [getattr(self, c) for c in METRIC_COLUMNS]


Z90 = 1.6448536269514722


def metrics(label: str, level: str, est, se, truth, failures: int = 0) -> MetricsReport:
    """Metrics from estimates and standard errors of shape (R, J) and truths (J,)."""
    est = np.atleast_2d(np.asarray(est, dtype=np.float64))
    se = np.atleast_2d(np.asarray(se, dtype=np.float64))
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    r, j = est.shape
    nan = float("nan")
    if r == 0:
        return MetricsReport(label, level, j, *([nan] * 13), 0, failures)
    bias = est.mean(axis=0) - truth
    err = est - truth
    mse = float(np.mean(err ** 2))
    sd_true = float(truth.std()) if j > 1 else nan
    sd_est = float(est.std(axis=1).mean()) if j > 1 else nan
    cover = float(np.mean(np.abs(err) <= Z90 * se))
    se_avg = float(se.mean())
    if r < 2:
        return MetricsReport(label, level, j, float(bias.mean()), float(np.abs(bias).mean()),
                             sd_true, sd_est, mse, nan, nan, nan, nan, se_avg, nan, nan,
                             cover, r, failures)
    c = est - est.mean(axis=0)
    m2 = np.mean(c ** 2, axis=0)
    ok = m2 > 0
    skew = np.full(j, nan)
    kurt = np.full(j, nan)
    skew[ok] = np.mean(c[:, ok] ** 3, axis=0) / m2[ok] ** 1.5
    kurt[ok] = np.mean(c[:, ok] ** 4, axis=0) / m2[ok] ** 2
    jb = r / 6.0 * (skew ** 2 + (kurt - 3.0) ** 2 / 4.0) if r >= 8 else np.full(j, nan)
    sd = est.std(axis=0, ddof=1)
    se_gap = se.mean(axis=0) - sd
    return MetricsReport(label, level, j, float(bias.mean()), float(np.abs(bias).mean()),
                         sd_true, sd_est, mse, _nanmean(skew), _nanmean(kurt), _nanmean(jb),
                         float(sd.mean()), se_avg, float(se_gap.mean()),
                         float(np.abs(se_gap).mean()), cover, r, failures)


def _nanmean(v):
    v = np.asarray(v)
    return float(np.nanmean(v)) if np.any(np.isfinite(v)) else float("nan")


@dataclass(eq=False)
class ReplicationResult:
    """Estimates of one replication for one estimator (None fields on failure)."""

    ate: float | None = None
    ate_se: float | None = None
    gates: dict = field(default_factory=dict)
    iate: np.ndarray | None = None
    iate_se: np.ndarray | None = None
    error: str | None = None


@dataclass(eq=False)
class EmcsResult:
    reports: dict
    raw: dict
    truth: dict
    failures: dict

    @property
    def any_failed(self) -> bool:
        return any(v > 0 for v in self.failures.values())

    def report(self, estimator: str, level: str = "ATE") -> MetricsReport:
        return self.reports[estimator][level]


def _rep_task(r: int):
    st = _parallel.STATE["emcs"]
    pop: Population = st["population"]
    rng = np.random.default_rng(np.random.SeedSequence(st["seed"],
                                                       spawn_key=(_STREAM_REPLICATION, r)))
    rows = np.sort(rng.choice(pop.training_pool, size=st["train_n"], replace=False))
    d = (rng.random(rows.size) < pop.propensity[rows]).astype(np.int64)
    y = np.where(d == 1, pop.y1[rows], pop.y0[rows])
    fit_seed = int(rng.integers(0, 2**62))
    val = pop.validation
    columns = {nm: pop.x[val, i] for i, nm in enumerate(pop.names)}
    out = []
    for cfg in st["estimators"]:
        try:
            ds = Dataset.from_arrays(pop.x[rows], d, y, kinds=list(pop.kinds),
                                     names=list(pop.names))
            eval_pop = EvalPopulation(encode_rows(ds.features, ds.levels, pop.x[val]), None,
                                      columns)
            f = train_forest(ds, dataclasses.replace(cfg, seed=fit_seed), threads=1)
            pe = evaluate_population(f, eval_pop, (1, 0), st["gate_vars"],
                                     iate_variance=st["iate_variance"])
            gates = {v: (np.array([e.point for e in fam.estimates]),
                         np.array([e.std_err for e in fam.estimates]), fam.values)
                     for v, fam in pe.gates.items()}
            out.append(ReplicationResult(pe.ate.point, pe.ate.std_err, gates, pe.iate,
                                         np.sqrt(np.maximum(pe.iate_var, 0.0))))
        except (MCForestError, ValueError) as exc:
            out.append(ReplicationResult(error=f"{type(exc).__name__}: {exc}"))
    return out


def true_effects(pop: Population, gate_vars) -> dict:
    """Validation-sample truths: ATE, GATEs per variable value, IATEs."""
    val = pop.validation
    iate = pop.iate[val]
    truth = {"ATE": np.array([iate.mean()]), "IATE": iate}
    for v in gate_vars:
        col = pop.column(v)[val]
        vals = np.unique(col)
        truth[f"GATE:{v}"] = (np.array([iate[col == c].mean() for c in vals]), list(vals))
    return truth


def run_emcs(dgp: DgpConfig, estimators, replications: int, train_n: int,
             gate_vars=("female", "age"), threads: int = 1, seed: int | None = None,
             population: Population | None = None, iate_variance: bool = True) -> EmcsResult:
    """Replicate draw-train-estimate on one synthetic population.

    Each replication draws ``train_n`` rows outside the validation set,
    assigns treatment by Bernoulli(p(x)), trains every estimator and
    predicts IATEs on the validation set, aggregated to GATEs and the ATE.
    Failed fits are counted and left out of the metrics.
    """
    estimators = list(estimators)
    labels = [c.label for c in estimators]
    if len(set(labels)) != len(labels):
        raise ValueError("estimators must have distinct labels")
    pop = gen_population(dgp) if population is None else population
    if train_n > pop.training_pool.size:
        raise ValueError("training sample larger than the training pool")
    seed = dgp.seed if seed is None else seed
    _parallel.STATE["emcs"] = dict(population=pop, seed=seed, train_n=train_n,
                                   estimators=estimators, gate_vars=tuple(gate_vars),
                                   iate_variance=iate_variance)
    try:
        per_rep = _parallel.pmap(_rep_task, range(replications), threads)
    finally:
        _parallel.STATE.pop("emcs", None)
    truth = true_effects(pop, gate_vars)
    reports, raw, failures = {}, {}, {}
    for e, label in enumerate(labels):
        res = [rep[e] for rep in per_rep]
        good = [x for x in res if x.error is None]
        fails = len(res) - len(good)
        failures[label] = fails
        for x in res:
            if x.error is not None:
                log.warning("%s failed in a replication: %s", label, x.error)
        raw[label] = res
        rep = {"ATE": metrics(label, "ATE", [[x.ate] for x in good],
                              [[x.ate_se] for x in good], truth["ATE"], fails)}
        for v in gate_vars:
            t, _ = truth[f"GATE:{v}"]
            rep[f"GATE:{v}"] = metrics(label, f"GATE:{v}",
                                       np.array([x.gates[v][0] for x in good]).reshape(-1, t.size),
                                       np.array([x.gates[v][1] for x in good]).reshape(-1, t.size),
                                       t, fails)
        j = truth["IATE"].size
        rep["IATE"] = metrics(label, "IATE", np.array([x.iate for x in good]).reshape(-1, j),
                              np.array([x.iate_se for x in good]).reshape(-1, j),
                              truth["IATE"], fails)
        reports[label] = rep
    return EmcsResult(reports, raw, truth, failures)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics(path, result: EmcsResult) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(METRIC_COLUMNS)
        for label, levels in result.reports.items():
            for rep in levels.values():
                wr.writerow([_fmt(v) for v in rep.row()])


def summary_text(result: EmcsResult) -> str:
    lines = [f"{'estimator':<28}{'level':<14}{'bias':>9}{'|bias|':>9}{'mse':>9}"
             f"{'jb':>8}{'std':>8}{'se':>8}{'cov90':>7}"]
    for label, levels in result.reports.items():
        for rep in levels.values():
            lines.append(f"{label:<28}{rep.level:<14}{rep.avg_bias:9.3f}{rep.avg_abs_bias:9.3f}"
                         f"{rep.mse:9.3f}{rep.jb:8.2f}{rep.std:8.3f}{rep.se_avg:8.3f}"
                         f"{rep.coverage90:7.3f}")
        lines.append(f"{'':<28}failures: {result.failures[label]}")
    return "\n".join(lines)
