"""GATE and ATE weights as averages of IATE weights, and effect estimates.

The averaging population defaults to sample B. A treatment subset ``delta``
restricts the population (``delta = {m}`` gives the effect on the treated);
it never changes the forest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forest import Forest, WeightVector, iter_weight_blocks
from .inference import (EffectEstimate, difference_test, effect_covariance, effect_variances,
                        wald_equality)

ALL = "ALL"


@dataclass(frozen=True)
class GroupSpec:
    """Population members with ``variable == value`` and treatment in ``delta``.

    ``delta`` of None means all treatments.
    """

    variable: str
    value: object
    delta: tuple | None = None

    @property
    def label(self) -> str:
        return group_label(self.variable, self.value)


@dataclass(frozen=True, eq=False)
class Population:
    """Where effects are averaged: feature rows, optional treatments and group columns."""

    x: np.ndarray
    d: np.ndarray | None = None
    columns: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x.shape[0]


def group_label(variable: str, value) -> str:
    """``name=value`` with integral floats printed without a decimal part."""
    if isinstance(value, (float, np.floating)) and float(value).is_integer():
        value = int(value)
    elif isinstance(value, np.generic):
        value = value.item()
    return f"{variable}={value}"


def sample_b(f: Forest) -> Population:
    cols = {name: f.x_b[:, i] for i, name in enumerate(f.feature_names)}
    cols.update(f.extra_b)
    return Population(f.x_b, f.d_b, cols)


def _members(pop: Population, variable=None, value=None, delta=None) -> np.ndarray:
    mask = np.ones(pop.n, dtype=bool)
    if variable is not None:
        if variable not in pop.columns:
            raise KeyError(f"group variable {variable!r} not found")
        mask &= np.asarray(pop.columns[variable]) == value
    if delta is not None:
        if pop.d is None:
            raise ValueError("treatment-set conditioning needs population treatments")
        mask &= np.isin(pop.d, np.asarray(tuple(delta)))
    return np.flatnonzero(mask)


def mean_weights(f: Forest, x_members: np.ndarray, contrast) -> np.ndarray:
    """Entrywise mean of the IATE weight vectors at the rows of ``x_members``."""
    total = np.zeros(f.n_b)
    for _, w, _ in iter_weight_blocks(f, x_members, contrast):
        total += w.sum(axis=0)
    return total / x_members.shape[0]


def gate_weights(f: Forest, g: GroupSpec, contrast, pop: Population | None = None) -> WeightVector:
    """Average IATE weights over the group's members.

    Raises
    ------
    ValueError
        If the group has no members.
    """
    pop = sample_b(f) if pop is None else pop
    idx = _members(pop, g.variable, g.value, g.delta)
    if idx.size == 0:
        raise ValueError(f"group {g.label} with treatments {g.delta or ALL} is empty")
    w = mean_weights(f, pop.x[idx], contrast)
    return WeightVector.from_dense(contrast, w, tag=g.label, n_used=idx.size)


def ate_weights(f: Forest, contrast, delta=None, pop: Population | None = None) -> WeightVector:
    """Average IATE weights over the population (members with treatment in ``delta``)."""
    pop = sample_b(f) if pop is None else pop
    idx = _members(pop, delta=delta)
    if idx.size == 0:
        raise ValueError(f"no population members with treatments {delta}")
    w = mean_weights(f, pop.x[idx], contrast)
    return WeightVector.from_dense(contrast, w, tag=ALL, n_used=idx.size)


def estimate_from_weights(f: Forest, w: WeightVector, level: str, k: int | None = None,
                          y=None) -> EffectEstimate:
    """Point estimate and weights-based variance of one weight vector."""
    y = f.y_b if y is None else np.asarray(y, dtype=np.float64)
    dense = w.dense()
    var = float(effect_variances(dense, y, f.d_b, k)[0])
    return EffectEstimate(tuple(w.contrast), level, float(dense @ y), var, w.tag, w.n_used)


def estimate_effect(f: Forest, contrast, level: str = "ATE", group: GroupSpec | None = None,
                    delta=None, x=None, pop: Population | None = None,
                    k: int | None = None) -> EffectEstimate:
    """Effect estimate at any level through the weights route.

    ``level`` is ``"IATE"`` (needs ``x``), ``"GATE"`` (needs ``group``) or ``"ATE"``.
    """
    from .forest import iate_weights
    if level == "IATE":
        w = iate_weights(f, x, contrast, tag="x")
    elif level == "GATE":
        w = gate_weights(f, group, contrast, pop)
    elif level == "ATE":
        w = ate_weights(f, contrast, delta, pop)
    else:
        raise ValueError(f"unknown level {level!r}")
    return estimate_from_weights(f, w, level, k)


@dataclass(eq=False)
class GateFamily:
    """GATEs over the values of one variable with their joint covariance."""

    variable: str
    values: list
    estimates: list
    cov: np.ndarray
    wald: tuple
    adjacent: list

    def rows(self):
        for i, e in enumerate(self.estimates):
            adj = self.adjacent[i - 1] if i > 0 else (np.nan, np.nan)
            yield e, adj


def gate_family(f: Forest, variable: str, contrast, values=None, delta=None,
                pop: Population | None = None, k: int | None = None) -> GateFamily:
    """GATEs for every value of ``variable`` plus adjacent-difference and Wald tests."""
    pop = sample_b(f) if pop is None else pop
    if variable not in pop.columns:
        raise KeyError(f"group variable {variable!r} not found")
    col = np.asarray(pop.columns[variable])
    if values is None:
        base = _members(pop, delta=delta)
        values = list(np.unique(col[base]))
    rows, ests = [], []
    for v in values:
        g = GroupSpec(variable, v, None if delta is None else tuple(delta))
        w = gate_weights(f, g, contrast, pop)
        rows.append(w.dense())
        ests.append(EffectEstimate(tuple(contrast), "GATE", float(rows[-1] @ f.y_b), 0.0,
                                   g.label, w.n_used))
    omega = np.vstack(rows)
    cov = effect_covariance(omega, f.y_b, f.d_b, k)
    ests = [EffectEstimate(e.contrast, e.level, e.point, float(cov[i, i]), e.group, e.n_members)
            for i, e in enumerate(ests)]
    points = np.array([e.point for e in ests])
    adjacent = [difference_test(points, cov, i, i - 1) for i in range(1, len(ests))]
    wald = wald_equality(ests, cov) if len(ests) >= 2 else (np.nan, 0, np.nan)
    return GateFamily(variable, list(values), ests, cov, wald, adjacent)


@dataclass(eq=False)
class PopulationEffects:
    """IATEs at every population point, plus the ATE and GATEs averaged from them."""

    contrast: tuple
    iate: np.ndarray
    iate_var: np.ndarray
    ate: EffectEstimate
    gates: dict


def evaluate_population(f: Forest, pop: Population, contrast, group_vars=(),
                        k: int | None = None, iate_variance: bool = True) -> PopulationEffects:
    """One pass over the population's weight blocks.

    Computes every IATE with its variance, the ATE weights and, for each
    variable in ``group_vars``, the GATE weights of each of its values.
    """
    y = f.y_b
    n = pop.n
    iate = np.empty(n)
    iate_var = np.zeros(n)
    ate_sum = np.zeros(f.n_b)
    keys = {}
    for v in group_vars:
        col = np.asarray(pop.columns[v])
        keys[v] = (col, list(np.unique(col)))
    gate_sum = {v: np.zeros((len(vals), f.n_b)) for v, (_, vals) in keys.items()}
    for lo, w, _ in iter_weight_blocks(f, pop.x, contrast):
        hi = lo + w.shape[0]
        iate[lo:hi] = w @ y
        if iate_variance:
            iate_var[lo:hi] = effect_variances(w, y, f.d_b, k)
        ate_sum += w.sum(axis=0)
        for v, (col, vals) in keys.items():
            c = col[lo:hi]
            for gi, val in enumerate(vals):
                sel = c == val
                if sel.any():
                    gate_sum[v][gi] += w[sel].sum(axis=0)
    ate_w = ate_sum / n
    ate = EffectEstimate(tuple(contrast), "ATE", float(ate_w @ y),
                         float(effect_variances(ate_w, y, f.d_b, k)[0]), ALL, n)
    gates = {}
    for v, (col, vals) in keys.items():
        sizes = np.array([(col == val).sum() for val in vals], dtype=np.float64)
        omega = gate_sum[v] / sizes[:, None]
        cov = effect_covariance(omega, y, f.d_b, k)
        ests = [EffectEstimate(tuple(contrast), "GATE", float(omega[i] @ y), float(cov[i, i]),
                               group_label(v, val), int(sizes[i])) for i, val in enumerate(vals)]
        points = np.array([e.point for e in ests])
        adjacent = [difference_test(points, cov, i, i - 1) for i in range(1, len(ests))]
        wald = wald_equality(ests, cov) if len(ests) >= 2 else (np.nan, 0, np.nan)
        gates[v] = GateFamily(v, vals, ests, cov, wald, adjacent)
    return PopulationEffects(tuple(contrast), iate, iate_var, ate, gates)
