"""Command line front end: ``mcforest {train,effects,simulate,support,balance,demo}``.

Configuration is a flat ``key = value`` text file; ``#`` starts a comment
and list values are comma separated. Every command reads ``--config`` and
writes CSV tables plus a plain-text summary into ``--out-dir``.

Data keys: ``data``, ``features`` (``name`` or ``name:categorical``),
``treatment``, ``outcome``, ``extra``.
Estimator keys: ``estimator``, ``penalty``, ``lc_folds``, ``n_trees``,
``subsample_ratio``, ``ab_fraction``, ``min_leaf``, ``min_leaf_per_treatment``,
``feature_poisson_mean``, ``max_depth``, ``min_daughter_share``,
``penalty_lambda``, ``lambda_scale``, ``lc_n_trees``, ``max_skip_share``,
``tune``, ``tune_poisson_means``, ``tune_min_leaf``, ``seed``, ``threads``.
Effect keys: ``forest``, ``contrast``, ``gates``, ``delta``, ``trim``,
``trim_lo``, ``trim_hi``, ``knn_k``, ``iate_dump``, ``weights_dump``.
Simulation keys: ``p``, ``selection``, ``target_share``, ``base_share``,
``selection_strength``, ``outcome_noise``, ``effect``, ``alpha``,
``effect_feature``, ``population_size``, ``validation_size``,
``replications``, ``train_n``, ``estimators`` (e.g. ``onef_mce.penalty.lc2``),
``gate_vars``, ``iate_variance``, ``raw_dump``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 estimation
error (including failed simulation replications).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .aggregation import Population, evaluate_population, sample_b
from .data import CATEGORICAL, ORDERED, Dataset, FeatureSpec, load_dataset, save_dataset
from .diagnostics import balance_table, trim_support, write_balance
from .errors import ConfigError, DataError, EstimationError
from .forest import (ESTIMATORS, ForestConfig, default_tuning_grid, iter_weight_blocks,
                     train_forest, tune_oob, WeightVector)
from .serialize import export_weights, load_forest, save_forest
from .tree import TreeConfig

log = logging.getLogger("mcforest")

_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}

# key -> (parser, default)
KEYS = {
    "data": (str, None), "features": (list, None), "treatment": (str, "d"),
    "outcome": (str, "y"), "extra": (list, []),
    "estimator": (str, "onef_mce"), "penalty": (bool, False), "lc_folds": (int, 0),
    "n_trees": (int, 1000), "subsample_ratio": (float, 0.5), "ab_fraction": (float, 0.5),
    "min_leaf": (int, 5), "min_leaf_per_treatment": (int, 2),
    "feature_poisson_mean": (float, 5.0), "max_depth": (int, 0),
    "min_daughter_share": (float, 0.0), "penalty_lambda": (float, None),
    "lambda_scale": (float, 1.0), "lc_n_trees": (int, 0), "max_skip_share": (float, 0.5),
    "tune": (bool, False), "tune_poisson_means": (list, []), "tune_min_leaf": (list, []),
    "seed": (int, 0), "threads": (int, 1),
    "forest": (str, None), "contrast": (list, []), "gates": (list, []), "delta": (list, []),
    "trim": (bool, False), "trim_lo": (float, 0.05), "trim_hi": (float, 0.95),
    "knn_k": (int, 0), "iate_dump": (bool, False), "weights_dump": (bool, False),
    "p": (int, 12), "selection": (str, "logit"), "target_share": (float, 0.5),
    "base_share": (float, 0.15), "selection_strength": (float, 1.0),
    "outcome_noise": (float, 2.0), "effect": (str, "sine"), "alpha": (float, 2.0),
    "effect_feature": (str, "earnings"), "population_size": (int, 20000),
    "validation_size": (int, 2000), "replications": (int, 200), "train_n": (int, 1000),
    "estimators": (list, ["onef_mce"]), "gate_vars": (list, ["female", "age"]),
    "iate_variance": (bool, True), "raw_dump": (bool, False),
    "demo_n": (int, 2000),
}


class Config(dict):
    """Parsed configuration with the file location of every key for messages."""

    def __init__(self, values, where, path):
        super().__init__(values)
        self.where = where
        self.path = path

    def get_(self, key):
        return self[key] if key in self else KEYS[key][1]

    def need(self, key):
        v = self.get_(key)
        if v is None:
            raise ConfigError(f"{self.path}: missing required key {key!r}")
        return v


def _parse_value(kind, text, loc):
    try:
        if kind is bool:
            return _BOOL[text.lower()]
        if kind is list:
            return [t.strip() for t in text.split(",") if t.strip()]
        if kind is float and text.lower() in ("none", ""):
            return None
        return kind(text)
    except (KeyError, ValueError):
        raise ConfigError(f"{loc}: cannot read {text!r} as {kind.__name__}") from None


def read_config(path) -> Config:
    """Parse a ``key = value`` file.

    Raises
    ------
    ConfigError
        Naming the file and line of an unknown key, a malformed line or an
        unreadable value.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    values, where = {}, {}
    for no, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        loc = f"{path}:{no}"
        if "=" not in text:
            raise ConfigError(f"{loc}: expected 'key = value'")
        key, val = (t.strip() for t in text.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{loc}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{loc}: duplicate key {key!r}")
        values[key] = _parse_value(KEYS[key][0], val, loc)
        where[key] = loc
    return Config(values, where, path)


def _resolve(cfg: Config, key) -> Path:
    p = Path(cfg.need(key))
    return p if p.is_absolute() else cfg.path.parent / p


def parse_estimator(spec: str) -> dict:
    """``base[.penalty][.lcK]`` into estimator keyword arguments."""
    parts = spec.lower().split(".")
    base = parts[0]
    if base not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {base!r}")
    out = {"estimator": base, "penalty": False, "lc_folds": 0}
    for part in parts[1:]:
        if part == "penalty":
            out["penalty"] = True
        elif part.startswith("lc") and part[2:].lstrip("-").isdigit():
            out["lc_folds"] = int(part[2:].lstrip("-"))
        else:
            raise ConfigError(f"unknown estimator modifier {part!r} in {spec!r}")
    return out


def forest_config(cfg: Config, **override) -> ForestConfig:
    try:
        tree = TreeConfig(min_leaf=cfg.get_("min_leaf"),
                          min_leaf_per_treatment=cfg.get_("min_leaf_per_treatment"),
                          feature_poisson_mean=cfg.get_("feature_poisson_mean"),
                          max_depth=cfg.get_("max_depth") or None,
                          min_daughter_share=cfg.get_("min_daughter_share"))
        kw = dict(estimator=cfg.get_("estimator"), penalty=cfg.get_("penalty"),
                  lc_folds=cfg.get_("lc_folds"), n_trees=cfg.get_("n_trees"),
                  subsample_ratio=cfg.get_("subsample_ratio"), ab_fraction=cfg.get_("ab_fraction"),
                  tree=tree, penalty_lambda=cfg.get_("penalty_lambda"),
                  lambda_scale=cfg.get_("lambda_scale"), lc_n_trees=cfg.get_("lc_n_trees") or None,
                  max_skip_share=cfg.get_("max_skip_share"), seed=cfg.get_("seed"))
        kw.update(override)
        return ForestConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"{cfg.path}: {exc}") from None


def load_data(cfg: Config) -> Dataset:
    schema = []
    for item in cfg.need("features"):
        name, _, kind = item.partition(":")
        kind = kind.strip() or ORDERED
        if kind not in (ORDERED, CATEGORICAL):
            raise ConfigError(f"{cfg.where.get('features', cfg.path)}: unknown feature kind {kind!r}")
        schema.append(FeatureSpec(name.strip(), kind))
    roles = {"treatment": cfg.get_("treatment"), "outcome": cfg.get_("outcome"),
             "extra": cfg.get_("extra")}
    return load_dataset(_resolve(cfg, "data"), schema, roles)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([repr(v) if isinstance(v, float) else v for v in r])


def cmd_train(cfg: Config, out: Path) -> int:
    ds = load_data(cfg)
    threads = cfg.get_("threads")
    fcfg = forest_config(cfg)
    lines = []
    if cfg.get_("tune"):
        means = [float(v) for v in cfg.get_("tune_poisson_means")]
        leaves = [int(v) for v in cfg.get_("tune_min_leaf")] or None
        if means:
            grid = [fcfg.with_(feature_poisson_mean=mu, min_leaf=ml)
                    for ml in (leaves or [fcfg.tree.min_leaf]) for mu in means]
        else:
            grid = default_tuning_grid(fcfg, ds.p, leaves)
        fcfg, objectives = tune_oob(ds, grid, threads)
        for g, obj in zip(grid, objectives):
            lines.append(f"tune feature_poisson_mean={g.tree.feature_poisson_mean!r} "
                         f"min_leaf={g.tree.min_leaf} oob_objective={obj!r}")
        lines.append(f"tune chosen feature_poisson_mean={fcfg.tree.feature_poisson_mean!r} "
                     f"min_leaf={fcfg.tree.min_leaf}")
    f = train_forest(ds, fcfg, threads)
    save_forest(f, out / "forest.bin")
    lines = [f"estimator {fcfg.label}", f"lambda {f.lam!r}", f"n_a {f.log['n_a']}",
             f"n_b {f.log['n_b']}", f"trees_used {f.log['n_trees_used']}",
             f"trees_dropped {f.n_dropped}",
             f"min_leaf_effective {f.log['min_leaf_effective']}",
             f"leaves_per_tree {f.log['leaves_per_tree']!r}"] + lines
    (out / "train_log.txt").write_text("\n".join(lines) + "\n")
    log.info("forest written to %s", out / "forest.bin")
    return 0


def _contrasts(cfg: Config, f) -> list:
    labels = [str(v) for v in f.treatment_labels] or [str(k) for k in range(f.m)]
    raw = cfg.get_("contrast")
    if not raw:
        return [(b, a) for a in range(f.m) for b in range(a + 1, f.m)]
    if len(raw) != 2:
        raise ConfigError(f"{cfg.where['contrast']}: contrast needs two treatment labels")
    try:
        return [(labels.index(raw[0]), labels.index(raw[1]))]
    except ValueError:
        raise ConfigError(f"{cfg.where['contrast']}: unknown treatment label in {raw}") from None


def _delta(cfg: Config, f):
    raw = cfg.get_("delta")
    if not raw:
        return None
    labels = [str(v) for v in f.treatment_labels]
    try:
        return tuple(labels.index(v) for v in raw)
    except ValueError:
        raise ConfigError(f"{cfg.where['delta']}: unknown treatment label in {raw}") from None


def _label(f, c):
    labs = f.treatment_labels or tuple(range(f.m))
    return f"{labs[c[0]]}-{labs[c[1]]}"


def cmd_effects(cfg: Config, out: Path) -> int:
    f = load_forest(_resolve(cfg, "forest"))
    pop = sample_b(f)
    keep = np.ones(pop.n, dtype=bool)
    summary = []
    if cfg.get_("trim"):
        keep, rep = trim_support(f, pop.x, (cfg.get_("trim_lo"), cfg.get_("trim_hi")))
        summary.append(f"support: discarded {rep.n_discarded} of {rep.n} "
                       f"({100 * rep.share_discarded:.2f}%)")
    delta = _delta(cfg, f)
    if delta is not None:
        keep &= np.isin(pop.d, delta)
    if not keep.any():
        raise DataError("no sample-B observations left after trimming and treatment conditioning")
    gates = cfg.get_("gates")
    for g in gates:
        if g not in pop.columns:
            raise DataError(f"group variable {g!r} is neither a feature nor an extra column")
    sub = Population(pop.x[keep], pop.d[keep], {k: np.asarray(v)[keep]
                                               for k, v in pop.columns.items()})
    k = cfg.get_("knn_k") or None
    rows, iate_rows, iate_sum = [], [], []
    for c in _contrasts(cfg, f):
        pe = evaluate_population(f, sub, c, gates, k=k)
        lab = _label(f, c)
        rows.append(["ATE", lab, "ALL", pe.ate.point, pe.ate.std_err, pe.ate.p_value])
        for v, fam in pe.gates.items():
            for i, e in enumerate(fam.estimates):
                rows.append(["GATE", lab, e.group, e.point, e.std_err, e.p_value])
                if i > 0:
                    diff, pv = fam.adjacent[i - 1]
                    rows.append(["GATE_DIFF", lab, f"{e.group} vs {fam.estimates[i - 1].group}",
                                 diff, float("nan"), pv])
            stat, df, pv = fam.wald
            rows.append(["WALD", lab, f"{v} df={df}", stat, float("nan"), pv])
        se = np.sqrt(np.maximum(pe.iate_var, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            sig = np.where(se > 0, np.abs(pe.iate) / se > 1.959963984540054, pe.iate != 0)
        iate_sum.append([lab, float(pe.iate.mean()), float(pe.iate.std()),
                         float(100 * np.mean(pe.iate < 0)), float(100 * np.mean(pe.iate == 0)),
                         float(100 * np.mean(pe.iate > 0)), float(se.mean()),
                         float(100 * np.mean(sig))])
        if cfg.get_("iate_dump"):
            b_rows = np.flatnonzero(keep)
            iate_rows.extend([lab, int(j), float(v), float(s)]
                             for j, v, s in zip(b_rows, pe.iate, se))
        if cfg.get_("weights_dump"):
            weights = []
            for lo, w, _ in iter_weight_blocks(f, sub.x, c):
                for r in range(w.shape[0]):
                    weights.append(WeightVector.from_dense(c, w[r], tag=int(lo + r)))
            export_weights(out / f"weights_{lab}.csv", weights)
    if cfg.get_("trim"):
        rows.append(["SUPPORT", "", "discarded_share", float(rep.share_discarded),
                     float("nan"), float("nan")])
    _write_csv(out / "effects.csv", ["level", "contrast", "group", "estimate", "std_err",
                                     "p_value"], rows)
    _write_csv(out / "iate_summary.csv", ["contrast", "mean", "sd", "share_neg_pct",
                                          "share_zero_pct", "share_pos_pct", "avg_se",
                                          "share_sig5_pct"], iate_sum)
    if cfg.get_("iate_dump"):
        _write_csv(out / "iates.csv", ["contrast", "b_index", "iate", "std_err"], iate_rows)
    for r in rows:
        summary.append(f"{r[0]:<10}{r[1]:<8}{r[2]:<28}{r[3]:12.4f}{r[4]:10.4f}{r[5]:9.4f}")
    (out / "effects_summary.txt").write_text("\n".join(summary) + "\n")
    return 0


def cmd_support(cfg: Config, out: Path) -> int:
    from .diagnostics import propensity_from_forest
    f = load_forest(_resolve(cfg, "forest"))
    ps = propensity_from_forest(f, f.x_b)
    keep, rep = trim_support(f, f.x_b, (cfg.get_("trim_lo"), cfg.get_("trim_hi")))
    labs = [str(v) for v in (f.treatment_labels or range(f.m))]
    _write_csv(out / "propensity.csv", ["b_index"] + [f"p_{v}" for v in labs] + ["retained"],
               [[j] + [float(v) for v in ps[j]] + [int(keep[j])] for j in range(f.n_b)])
    (out / "support_summary.txt").write_text(
        f"bounds [{rep.lo!r}, {rep.hi!r}]\ndiscarded {rep.n_discarded} of {rep.n} "
        f"({100 * rep.share_discarded:.2f}%)\n")
    return 0


def cmd_balance(cfg: Config, out: Path) -> int:
    f = load_forest(_resolve(cfg, "forest"))
    for c in _contrasts(cfg, f):
        rows = balance_table(f, c)
        write_balance(out / f"balance_{_label(f, c)}.csv", rows)
    return 0


def cmd_simulate(cfg: Config, out: Path) -> int:
    from .emcs import DgpConfig, run_emcs, summary_text, write_metrics
    try:
        dgp = DgpConfig(p=cfg.get_("p"), selection=cfg.get_("selection"),
                        target_share=cfg.get_("target_share"), base_share=cfg.get_("base_share"),
                        selection_strength=cfg.get_("selection_strength"),
                        outcome_noise=cfg.get_("outcome_noise"), effect=cfg.get_("effect"),
                        alpha=cfg.get_("alpha"), effect_feature=cfg.get_("effect_feature"),
                        population_size=cfg.get_("population_size"),
                        validation_size=cfg.get_("validation_size"), seed=cfg.get_("seed"))
    except ValueError as exc:
        raise ConfigError(f"{cfg.path}: {exc}") from None
    ests = [forest_config(cfg, **parse_estimator(s)) for s in cfg.get_("estimators")]
    res = run_emcs(dgp, ests, cfg.get_("replications"), cfg.get_("train_n"),
                   cfg.get_("gate_vars"), cfg.get_("threads"),
                   iate_variance=cfg.get_("iate_variance"))
    write_metrics(out / "metrics.csv", res)
    (out / "metrics_summary.txt").write_text(summary_text(res) + "\n")
    if cfg.get_("raw_dump"):
        rows = []
        for label, reps in res.raw.items():
            for r, x in enumerate(reps):
                rows.append([label, r, x.ate if x.error is None else float("nan"),
                             x.ate_se if x.error is None else float("nan"), x.error or ""])
        _write_csv(out / "replications.csv", ["estimator", "replication", "ate", "ate_se",
                                              "error"], rows)
    if res.any_failed:
        log.error("replications failed: %s", res.failures)
        return 4
    return 0


def cmd_demo(cfg: Config, out: Path) -> int:
    """Write a synthetic demo CSV drawn from the simulation population."""
    from .emcs import DgpConfig, gen_population
    n = cfg.get_("demo_n")
    dgp = DgpConfig(population_size=max(n + 1, 1000), validation_size=1, seed=cfg.get_("seed"))
    pop = gen_population(dgp)
    rng = np.random.default_rng(cfg.get_("seed"))
    rows = np.sort(rng.choice(pop.n, size=n, replace=False))
    d = (rng.random(n) < pop.propensity[rows]).astype(int)
    y = np.where(d == 1, pop.y1[rows], pop.y0[rows])
    kinds = list(pop.kinds)
    ds = Dataset.from_arrays(pop.x[rows], d, y, kinds=kinds, names=list(pop.names))
    save_dataset(ds, out / "demo.csv")
    return 0


COMMANDS = {"train": cmd_train, "effects": cmd_effects, "simulate": cmd_simulate,
            "support": cmd_support, "balance": cmd_balance, "demo": cmd_demo}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="mcforest", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int)
    ap.add_argument("--out-dir", default=".")
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = read_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.threads is not None:
            cfg["threads"] = args.threads
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
