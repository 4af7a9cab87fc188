"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``. The Monte Carlo criteria
use 200-tree forests on a 12000-row synthetic population; together they
take a few minutes on one core.
"""

import time

import numpy as np
import pytest

from mcforest.aggregation import Population, estimate_effect, evaluate_population
from mcforest.cli import main
from mcforest.data import Dataset
from mcforest.emcs import DgpConfig, gen_population, ite_noise, jb_stat, run_emcs
from mcforest.forest import ForestConfig, predict_iate, train_forest, weight_block
from mcforest.serialize import save_forest
from mcforest.splitting import (ONEF, ONEF_MCE, ONEF_VART, ContrastSet, CriterionConfig,
                                NodeStats, leaf_mce, leaf_mse, mce_criterion, penalty)
from mcforest.tree import TreeConfig, TreeData, best_split

from conftest import synth
from oracles import oracle_best

MC_TREES = 200
MC_POPULATION = dict(population_size=12000, validation_size=1000, seed=1)


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return report


def test_criterion_01_weight_identities(verdict):
    t0 = time.perf_counter()
    worst_sum = worst_pred = 0.0
    for m in (2, 3):
        ds = synth(n=2000, m=m, p=5, seed=10 + m, confounded=True)
        f = train_forest(ds, ForestConfig(estimator=ONEF_MCE, n_trees=300))
        x = np.random.default_rng(m).normal(size=(1000, 5))
        for c in [(b, a) for a in range(m) for b in range(a + 1, m)]:
            w, used, _ = weight_block(f, x, c)
            pos = np.where(w > 0, w, 0.0).sum(axis=1)
            neg = np.where(w < 0, w, 0.0).sum(axis=1)
            worst_sum = max(worst_sum, np.abs(pos - 1).max(), np.abs(neg + 1).max())
            # independent route: per-tree leaf-mean differences, no weights formed
            worst_pred = max(worst_pred, np.abs(predict_iate(f, x, c) - w @ f.y_b).max())
    elapsed = time.perf_counter() - t0
    ok = worst_sum <= 1e-10 and worst_pred <= 1e-10 and elapsed < 60
    verdict(1, ok, f"max |sum-1| {worst_sum:.2e}, max |iate - w.y| {worst_pred:.2e}, "
                   f"{elapsed:.1f}s")


def test_criterion_02_aggregation_identity(verdict):
    pop = gen_population(DgpConfig(population_size=4000, validation_size=1000, seed=2))
    rows = pop.training_pool[:1000]
    rng = np.random.default_rng(0)
    d = (rng.random(rows.size) < pop.propensity[rows]).astype(int)
    y = np.where(d == 1, pop.y1[rows], pop.y0[rows])
    ds = Dataset.from_arrays(pop.x[rows], d, y, kinds=list(pop.kinds), names=list(pop.names))
    f = train_forest(ds, ForestConfig(estimator=ONEF_MCE, n_trees=100))
    val = pop.validation
    cols = {nm: pop.x[val, i] for i, nm in enumerate(pop.names)}
    pe = evaluate_population(f, Population(pop.x[val], None, cols), (1, 0), ["female", "age"])
    gap = abs(pe.ate.point - pe.iate.mean())
    for v, fam in pe.gates.items():
        for val_, e in zip(fam.values, fam.estimates):
            gap = max(gap, abs(e.point - pe.iate[cols[v] == val_].mean()))
    verdict(2, gap <= 1e-12, f"max |aggregate - mean of IATEs| {gap:.2e}")


def _instance(seed, rule):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(8, 31))
    p = int(rng.integers(1, 4))
    m = 2 + seed % 2
    discrete = seed % 3 == 0
    x = rng.integers(0, 4, size=(n, p)).astype(float) if discrete else rng.normal(size=(n, p))
    cat = np.zeros(p, dtype=bool)
    if seed % 5 == 1:
        x[:, -1] = rng.integers(0, 4, size=n)
        cat[-1] = True
    d = np.concatenate([np.repeat(np.arange(m), 2), rng.integers(0, m, n - 2 * m)])
    y = x[:, 0] + d * (x[:, 0] > 0) + rng.normal(size=n)
    yt = None
    if rule == ONEF_MCE:
        from mcforest.matching import feature_scales, match_neighbors
        yt = match_neighbors(x, d, y, m, feature_scales(x))
    return TreeData.build(x, d, y, m, cat, yt), rng


def test_criterion_03_split_search_oracle(verdict):
    t0 = time.perf_counter()
    n_inst = mismatches = nonempty = 0
    for rule in (ONEF, ONEF_MCE, ONEF_VART):
        for pen in (False, True):
            for seed in range(40):
                data, rng = _instance(seed, rule)
                cfg = TreeConfig(min_leaf=1 + seed % 3, min_leaf_per_treatment=1 + seed % 2,
                                 criterion=CriterionConfig(rule, pen))
                lam = float(rng.uniform(0.1, 3)) if pen else 0.0
                node = np.arange(data.y.size)
                feats = range(data.x.shape[1])
                got = best_split(node, data, cfg, lam, features=feats)
                want = oracle_best(node, data.x, data.d, data.y, data.y_tilde, data.m,
                                   data.categorical, feats, cfg, lam)
                n_inst += 1
                if want is None:
                    mismatches += got is not None
                    continue
                nonempty += 1
                same = (got is not None and got.feature == want[1]
                        and np.array_equal(got.goes_left(data.x[node]), want[2])
                        and np.isclose(got.value, want[0], rtol=1e-9, atol=1e-9))
                mismatches += not same
    elapsed = time.perf_counter() - t0
    ok = n_inst >= 200 and mismatches == 0 and elapsed < 120
    verdict(3, ok, f"{n_inst} instances ({nonempty} with a feasible split), "
                   f"{mismatches} mismatches, {elapsed:.1f}s")


def test_criterion_04_penalty_algebra(verdict):
    rng = np.random.default_rng(4)
    bad = 0
    for _ in range(5000):
        lam = float(rng.uniform(0, 10))
        a, b = rng.integers(0, 30, 2), rng.integers(0, 30, 2)
        if a.sum() == 0 or b.sum() == 0:
            continue
        v = penalty(NodeStats(a, np.zeros(2), np.zeros(2)), NodeStats(b, np.zeros(2), np.zeros(2)),
                    lam)
        bad += not (-1e-12 <= v <= lam + 1e-12)
    equal_ok = all(
        abs(penalty(NodeStats(np.array([k, j]), np.zeros(2), np.zeros(2)),
                    NodeStats(np.array([2 * k, 2 * j]), np.zeros(2), np.zeros(2)), 2.5) - 2.5)
        < 1e-12 for k in range(1, 6) for j in range(1, 6))
    extreme = penalty(NodeStats(np.array([7, 0]), np.zeros(2), np.zeros(2)),
                      NodeStats(np.array([0, 4]), np.zeros(2), np.zeros(2)), 2.5)
    ok = bad == 0 and equal_ok and extreme == 0.0
    verdict(4, ok, f"{bad} out-of-range values, equal shares give lambda: {equal_ok}, "
                   f"disjoint shares give {extreme}")


def test_criterion_05_mse_mce_identity(verdict):
    worst = 0.0
    for seed in range(500):
        rng = np.random.default_rng(seed)
        m = 2 + seed % 3
        sides = []
        for _ in range(2):
            n = int(rng.integers(m, 25))
            d = np.concatenate([np.arange(m), rng.integers(0, m, n - m)])
            y = rng.normal(size=n) * 3
            yt = rng.normal(size=(n, m))
            yt[np.arange(n), d] = y
            sides.append(NodeStats.from_obs(y, d, m, yt))
        expected = sum(leaf_mse(s, a) + leaf_mse(s, b) - 2 * leaf_mce(s, a, b)
                       for s in sides for a, b in ContrastSet.all_pairs(m).pairs)
        got = mce_criterion(*sides, CriterionConfig(ONEF_MCE))
        worst = max(worst, abs(got - expected) / max(1.0, abs(expected)))
    verdict(5, worst <= 1e-12, f"max relative gap {worst:.2e} over 500 leaf pairs")


@pytest.fixture(scope="module")
def randomized_run():
    dgp = DgpConfig(selection="random", effect="zero", alpha=0.0, **MC_POPULATION)
    t0 = time.perf_counter()
    res = run_emcs(dgp, [ForestConfig(estimator=ONEF_MCE, n_trees=MC_TREES)], 200, 1000,
                   iate_variance=False)
    return res, time.perf_counter() - t0


def test_criterion_06_randomized_coverage(verdict, randomized_run):
    res, elapsed = randomized_run
    rep = res.report("OneF.MCE")
    est = np.array([x.ate for x in res.raw["OneF.MCE"] if x.error is None])
    mc_se = est.std(ddof=1) / np.sqrt(est.size)
    ok = 0.84 <= rep.coverage90 <= 0.96 and abs(rep.avg_bias) < 2 * mc_se
    verdict(6, ok, f"coverage {rep.coverage90:.3f}, bias {rep.avg_bias:.4f} "
                   f"(2 MC s.e. {2 * mc_se:.4f}), R={rep.replications}, "
                   f"failures {rep.failures}, {elapsed:.0f}s")


def test_criterion_07_penalty_reduces_selection_bias(verdict):
    dgp = DgpConfig(selection="logit", effect="sine", alpha=2.0, **MC_POPULATION)
    ests = [ForestConfig(estimator=ONEF_MCE, penalty=True, n_trees=MC_TREES),
            ForestConfig(estimator=ONEF_VART, n_trees=MC_TREES)]
    res = run_emcs(dgp, ests, 100, 1000, iate_variance=False)
    pen, vart = res.report("OneF.MCE.Penalty"), res.report("OneF.VarT")
    ok = abs(pen.avg_bias) < abs(vart.avg_bias)
    verdict(7, ok, f"|bias| penalty {abs(pen.avg_bias):.3f} "
                   f"(failures {pen.failures}) vs VarT {abs(vart.avg_bias):.3f} "
                   f"(failures {vart.failures})")


def test_criterion_08_normality(verdict, randomized_run):
    res, _ = randomized_run
    est = [x.ate for x in res.raw["OneF.MCE"] if x.error is None]
    jb = jb_stat(est)
    verdict(8, jb < 9.2, f"JB {jb:.2f} over {len(est)} replications")


def test_criterion_09_ite_construction(verdict):
    rng = np.random.default_rng(9)
    n = 10**5
    iate = rng.normal(size=n) * 1.7
    ite = ite_noise(iate, rng)
    integral = bool(np.all(ite == np.round(ite)))
    gap = ite - iate
    centred = abs(gap.mean()) < 3 * gap.std() / np.sqrt(n)
    forced = ite_noise(np.full(n, 0.3), rng, u=np.zeros(n))
    share2 = float(np.mean(forced == 2))
    ok = integral and centred and abs(share2 - 0.3) <= 0.01
    verdict(9, ok, f"integer {integral}, mean gap {gap.mean():.4f} "
                   f"(3 s.e. {3 * gap.std() / np.sqrt(n):.4f}), P(ITE=2) {share2:.4f}")


def test_criterion_10_variance_sanity(verdict, randomized_run):
    ds = synth(n=1000, m=2, seed=10)
    stump = ForestConfig(estimator=ONEF, n_trees=1, subsample_ratio=1.0,
                         tree=TreeConfig(min_leaf=10**6))
    f = train_forest(ds, stump)
    y1, y0 = f.y_b[f.d_b == 1], f.y_b[f.d_b == 0]
    closed = y1.var(ddof=1) / y1.size + y0.var(ddof=1) / y0.size
    # a window as large as each treatment group: the k-NN moments are the group moments
    got = estimate_effect(f, (1, 0), k=max(y1.size, y0.size)).variance
    stump_gap = abs(got - closed) / closed
    res, _ = randomized_run
    good = [x for x in res.raw["OneF.MCE"] if x.error is None]
    v_hat = np.mean([x.ate_se ** 2 for x in good])
    v_emp = np.var([x.ate for x in good], ddof=1)
    ratio = v_hat / v_emp
    ok = stump_gap <= 1e-10 and 0.5 <= ratio <= 2.0
    verdict(10, ok, f"stump relative gap {stump_gap:.2e}, mean V-hat / replication variance "
                    f"{ratio:.3f}")


def test_criterion_11_honesty_and_determinism(verdict, tmp_path):
    ds = synth(n=1200, m=3, seed=11, confounded=True, categorical=True)
    cfg = ForestConfig(estimator=ONEF_MCE, penalty=True, n_trees=60, seed=3)
    f = train_forest(ds, cfg)
    y = ds.y.copy()
    b = f.split.b_indices
    y[b] = np.random.default_rng(0).permutation(y[b])
    g = train_forest(Dataset.from_arrays(ds.x, ds.d, y, kinds=[s.kind for s in ds.features]), cfg)
    # raw bytes, so the NaN thresholds of leaves compare bit for bit
    fields = ("feature", "threshold", "left", "right", "build")
    same_trees = all(
        all(getattr(s, k).tobytes() == getattr(t, k).tobytes() for k in fields)
        and s.left_levels == t.left_levels
        for s, t in zip(f.trees(), g.trees()))
    outcomes_moved = not np.array_equal(f.y_b, g.y_b)
    files = []
    for threads in (1, 1, 2):
        h = train_forest(ds, cfg, threads=threads)
        path = tmp_path / f"f{len(files)}.bin"
        save_forest(h, path)
        files.append(path.read_bytes())
    forest_bytes = files[0] == files[1] == files[2]
    # end to end through the command line: every artifact of two runs per thread count
    data = tmp_path / "demo.cfg"
    data.write_text("demo_n = 600\nseed = 4\n")
    assert main(["demo", "--config", str(data), "--out-dir", str(tmp_path)]) == 0
    feats = "female, age, educ, earnings, z1, z2, z3, sector:categorical, u1"
    (tmp_path / "t.cfg").write_text(f"data = demo.csv\nfeatures = {feats}\nn_trees = 30\n"
                                    "estimator = onef_mce\nlc_folds = 2\nseed = 8\n")
    artifacts = []
    for run, threads in enumerate(["1", "1", "2"]):
        out = tmp_path / f"run{run}"
        assert main(["train", "--config", str(tmp_path / "t.cfg"), "--threads", threads,
                     "--out-dir", str(out)]) == 0
        (out / "e.cfg").write_text("forest = forest.bin\ngates = female\niate_dump = yes\n"
                                   "trim = yes\n")
        assert main(["effects", "--config", str(out / "e.cfg"), "--out-dir", str(out)]) == 0
        artifacts.append({p.name: p.read_bytes() for p in sorted(out.iterdir())
                          if p.name != "e.cfg"})
    cli_bytes = artifacts[0] == artifacts[1] == artifacts[2]
    ok = same_trees and outcomes_moved and forest_bytes and cli_bytes
    verdict(11, ok, f"tree structures unchanged by B outcomes: {same_trees}, "
                    f"forest files identical across runs/threads: {forest_bytes}, "
                    f"CLI artifacts identical ({len(artifacts[0])} files): {cli_bytes}")
