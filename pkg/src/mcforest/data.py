"""Dataset container, CSV ingestion and the A/B estimation-sample split."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError

ORDERED = "ordered"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class FeatureSpec:
    """Name and kind of one feature column.

    ``index`` is the column position inside ``Dataset.x``; it is filled in by
    the loader when left at -1.
    """

    name: str
    kind: str = ORDERED
    index: int = -1

    def __post_init__(self):
        if self.kind not in (ORDERED, CATEGORICAL):
            raise DataError(f"feature {self.name!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Features, treatment codes in ``0..m-1`` and outcomes.

    Categorical features are stored as contiguous integer codes; the original
    labels live in ``levels``. ``treatment_labels[k]`` is the original value of
    treatment code ``k``. ``extra`` carries non-feature columns (group
    variables) aligned with the rows.
    """

    x: np.ndarray
    d: np.ndarray
    y: np.ndarray
    features: tuple
    treatment_labels: tuple = ()
    levels: Mapping[str, tuple] = field(default_factory=dict)
    extra: Mapping[str, np.ndarray] = field(default_factory=dict)
    outcome_name: str = "y"
    treatment_name: str = "d"

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        d = np.ascontiguousarray(self.d, dtype=np.int64)
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        if x.ndim != 2 or d.ndim != 1 or y.ndim != 1:
            raise DataError("x must be 2-d, d and y 1-d")
        n = x.shape[0]
        if d.shape[0] != n or y.shape[0] != n:
            raise DataError("x, d and y must have the same number of rows")
        if len(self.features) != x.shape[1] or x.shape[1] == 0:
            raise DataError("need one FeatureSpec per column and at least one feature")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise DataError("feature names must be unique")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("missing or non-finite values in features or outcome")
        m = int(d.max()) + 1 if n else 0
        if n == 0 or d.min() < 0 or np.any(np.bincount(d, minlength=m) == 0):
            raise DataError("treatment codes must be contiguous 0..m-1, each observed")
        if m < 2:
            raise DataError("need at least two treatments")
        if n < 2 * m:
            raise DataError(f"need at least {2 * m} rows for {m} treatments, got {n}")
        for f in self.features:
            if f.kind == CATEGORICAL:
                col = x[:, f.index]
                if np.any(col != np.round(col)) or col.min() < 0:
                    raise DataError(f"categorical feature {f.name!r} must hold codes >= 0")
                if np.unique(col).size < 2:
                    raise DataError(f"categorical feature {f.name!r} needs >= 2 levels")
        extra = {k: np.asarray(v) for k, v in self.extra.items()}
        for k, v in extra.items():
            if v.shape[0] != n:
                raise DataError(f"extra column {k!r} has wrong length")
            v.setflags(write=False)
        for a in (x, d, y):
            a.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "extra", extra)
        if not self.treatment_labels:
            object.__setattr__(self, "treatment_labels", tuple(range(m)))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return int(self.d.max()) + 1

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def categorical_mask(self) -> np.ndarray:
        return np.array([f.kind == CATEGORICAL for f in self.features])

    def column(self, name: str) -> np.ndarray:
        """Feature or extra column by name."""
        for f in self.features:
            if f.name == name:
                return self.x[:, f.index]
        if name in self.extra:
            return self.extra[name]
        raise DataError(f"unknown column {name!r}")

    @classmethod
    def from_arrays(cls, x, d, y, kinds: Sequence[str] | None = None,
                    names: Sequence[str] | None = None, extra=None) -> "Dataset":
        """Build a dataset from raw arrays, remapping treatment labels.

        Treatment values are mapped to ``0..m-1`` in sorted order of the
        original labels; categorical columns are remapped the same way.
        """
        x = np.array(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        p = x.shape[1]
        kinds = list(kinds) if kinds is not None else [ORDERED] * p
        names = list(names) if names is not None else [f"x{j}" for j in range(p)]
        feats = tuple(FeatureSpec(nm, k, j) for j, (nm, k) in enumerate(zip(names, kinds)))
        levels = {}
        for f in feats:
            if f.kind == CATEGORICAL:
                labs, codes = np.unique(x[:, f.index], return_inverse=True)
                x[:, f.index] = codes
                levels[f.name] = tuple(labs.tolist())
        labels, codes = np.unique(np.asarray(d), return_inverse=True)
        return cls(x, codes.astype(np.int64), np.asarray(y, dtype=np.float64), feats,
                   treatment_labels=tuple(labels.tolist()), levels=levels,
                   extra=dict(extra or {}))


def encode_rows(features, levels: Mapping[str, tuple], x_raw) -> np.ndarray:
    """Map raw categorical labels of new rows onto a dataset's level codes.

    Labels never seen in training become -1 (they follow the right branch of
    every categorical split).
    """
    raw = np.atleast_2d(np.asarray(x_raw, dtype=object))
    x = np.empty(raw.shape, dtype=np.float64)
    for f in features:
        col = raw[:, f.index]
        if f.kind == CATEGORICAL and f.name in levels:
            code = {_level_key(v): k for k, v in enumerate(levels[f.name])}
            x[:, f.index] = [code.get(_level_key(v), -1) for v in col]
        else:
            x[:, f.index] = col.astype(np.float64)
    return x


def _level_key(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return str(v)


@dataclass(frozen=True, eq=False)
class SampleSplit:
    """Disjoint index sets of sample A (tree building) and sample B (estimation)."""

    a_indices: np.ndarray
    b_indices: np.ndarray
    seed: int


def _number(text: str):
    try:
        return float(text)
    except ValueError:
        return None


def load_dataset(path, schema: Sequence[FeatureSpec], roles: Mapping[str, object]) -> Dataset:
    """Read a CSV file with a header row into a :class:`Dataset`.

    Parameters
    ----------
    path : str or Path
        Comma-separated UTF-8 file, '.' as decimal point.
    schema : sequence of FeatureSpec
        Feature columns in the order they should appear in ``x``.
    roles : mapping
        ``treatment`` and ``outcome`` column names; optional ``extra`` list
        of further columns to carry along (e.g. group variables).

    Raises
    ------
    DataError
        On empty cells (naming row and column), non-numeric outcomes or
        ordered features, and a treatment column with a single level.
    """
    path = Path(path)
    treat_col = roles.get("treatment")
    out_col = roles.get("outcome")
    if not treat_col or not out_col:
        raise DataError("role map needs a treatment and an outcome column")
    extra_cols = list(roles.get("extra", ()) or ())
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    pos = {h: k for k, h in enumerate(header)}
    for name in [f.name for f in schema] + [treat_col, out_col] + extra_cols:
        if name not in pos:
            raise DataError(f"{path}: column {name!r} not in header")
    for r, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: line {r} has {len(row)} fields, expected {len(header)}")
        for name in [f.name for f in schema] + [treat_col, out_col] + extra_cols:
            if row[pos[name]].strip() == "":
                raise DataError(f"{path}: missing value at line {r}, column {name!r}")
    n = len(rows)

    def numeric(name):
        vals = np.empty(n)
        for r, row in enumerate(rows):
            v = _number(row[pos[name]].strip())
            if v is None:
                raise DataError(f"{path}: non-numeric value {row[pos[name]]!r} "
                                f"at line {r + 2}, column {name!r}")
            vals[r] = v
        return vals

    y = numeric(out_col)
    x = np.empty((n, len(schema)))
    levels = {}
    feats = []
    for j, f in enumerate(schema):
        raw = [row[pos[f.name]].strip() for row in rows]
        if f.kind == CATEGORICAL:
            labs, codes = _encode(raw)
            x[:, j] = codes
            levels[f.name] = tuple(labs)
        else:
            x[:, j] = numeric(f.name)
        feats.append(FeatureSpec(f.name, f.kind, j))
    traw = [row[pos[treat_col]].strip() for row in rows]
    tlabs, d = _encode(traw)
    if len(tlabs) < 2:
        raise DataError(f"{path}: treatment column {treat_col!r} has a single level")
    extra = {}
    for name in extra_cols:
        raw = [row[pos[name]].strip() for row in rows]
        try:
            extra[name] = np.array([float(v) for v in raw])
        except ValueError:
            extra[name] = np.array(raw, dtype=object)
    return Dataset(x, d, y, tuple(feats), treatment_labels=tuple(tlabs), levels=levels,
                   extra=extra, outcome_name=out_col, treatment_name=treat_col)


def _encode(raw):
    """Sorted distinct labels and the code of every raw entry.

    Labels sort numerically when all of them parse as numbers; numeric
    labels are returned as numbers (ints when integral), so "1" and "1.0"
    are the same level.
    """
    try:
        nums = [float(v) for v in raw]
    except ValueError:
        labs = sorted(set(raw))
        code = {lab: k for k, lab in enumerate(labs)}
        return labs, np.array([code[v] for v in raw], dtype=np.int64)
    uniq = sorted(set(nums))
    code = {v: k for k, v in enumerate(uniq)}
    labs = [int(v) if v.is_integer() else v for v in uniq]
    return labs, np.array([code[v] for v in nums], dtype=np.int64)


def save_dataset(ds: Dataset, path) -> None:
    """Write ``ds`` as CSV so that :func:`load_dataset` recovers the numeric content."""
    path = Path(path)
    cols = ds.feature_names + [ds.treatment_name, ds.outcome_name] + list(ds.extra)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(ds.n):
            row = []
            for f in ds.features:
                v = ds.x[i, f.index]
                if f.kind == CATEGORICAL and f.name in ds.levels:
                    row.append(_fmt(ds.levels[f.name][int(v)]))
                else:
                    row.append(_fmt(v))
            row.append(_fmt(ds.treatment_labels[ds.d[i]]))
            row.append(_fmt(ds.y[i]))
            row.extend(_fmt(ds.extra[k][i]) for k in ds.extra)
            w.writerow(row)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return str(int(v)) if v.is_integer() and abs(v) < 2**53 else repr(v)
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def split_ab(ds: Dataset, seed: int, fraction: float = 0.5) -> SampleSplit:
    """Stratified random split into sample A and sample B.

    ``|A| = ceil(fraction * n)``; the per-treatment sizes of A follow
    largest-remainder allocation of ``fraction * n_d`` and every treatment
    keeps at least one observation in each half (which takes precedence
    over the target size when both cannot hold).

    Raises
    ------
    ValueError
        If ``fraction`` is not in (0, 1).
    DataError
        If some treatment has fewer than two observations.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    counts = np.bincount(ds.d, minlength=ds.m)
    if np.any(counts < 2):
        raise DataError("every treatment needs >= 2 observations to stratify the split")
    target = math.ceil(fraction * ds.n)
    quota = fraction * counts
    alloc = np.floor(quota).astype(np.int64)
    # np.argsort is stable: equal remainders go to the lower treatment code
    rest = target - int(alloc.sum())
    order = np.argsort(-(quota - alloc), kind="stable")
    for k in order[:rest]:
        alloc[k] += 1
    alloc = np.clip(alloc, 1, counts - 1)
    # clipping can move the total away from the target; rebalance within slack
    diff = target - int(alloc.sum())
    for k in order:
        if diff == 0:
            break
        if diff > 0 and alloc[k] < counts[k] - 1:
            step = min(diff, counts[k] - 1 - alloc[k])
            alloc[k] += step
            diff -= step
        elif diff < 0 and alloc[k] > 1:
            step = min(-diff, alloc[k] - 1)
            alloc[k] -= step
            diff += step
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    a_parts = []
    for k in range(ds.m):
        members = np.flatnonzero(ds.d == k)
        a_parts.append(rng.permutation(members)[: alloc[k]])
    a = np.sort(np.concatenate(a_parts))
    mask = np.zeros(ds.n, dtype=bool)
    mask[a] = True
    b = np.flatnonzero(~mask)
    return SampleSplit(a, b, seed)
