import csv
import time

import pytest

from mcforest.cli import main, parse_estimator, read_config
from mcforest.errors import ConfigError

FEATURES = "female, age, educ, earnings, z1, z2, z3, sector:categorical, u1"


def _write(path, **kv):
    path.write_text("".join(f"{k} = {v}\n" for k, v in kv.items()))
    return path


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["demo", "--config", str(_write(root / "demo.cfg", demo_n=800, seed=3)),
                 "--out-dir", str(root)]) == 0
    train = _write(root / "train.cfg", data="demo.csv", features=FEATURES, n_trees=20, seed=5)
    assert main(["train", "--config", str(train), "--out-dir", str(root / "run")]) == 0
    return root, train


def test_train_outputs_and_rerun(trained, tmp_path):
    root, train = trained
    assert (root / "run" / "forest.bin").stat().st_size > 0
    log = (root / "run" / "train_log.txt").read_text()
    assert log.startswith("estimator OneF.MCE") and "lambda" in log
    assert main(["train", "--config", str(train), "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "forest.bin").read_bytes() == (root / "run" / "forest.bin").read_bytes()
    assert (tmp_path / "train_log.txt").read_text() == log
    assert main(["train", "--config", str(train), "--seed", "6", "--out-dir",
                 str(tmp_path / "s6")]) == 0
    assert (tmp_path / "s6" / "forest.bin").read_bytes() != (tmp_path / "forest.bin").read_bytes()


def test_effects_two_group_family(trained, tmp_path):
    root, _ = trained
    cfg = _write(tmp_path / "e.cfg", forest=root / "run" / "forest.bin", gates="female",
                 trim="yes", iate_dump="yes")
    assert main(["effects", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "effects.csv")
    levels = [r["level"] for r in rows]
    assert levels.count("ATE") == 1 and levels.count("GATE") == 2
    assert levels.count("GATE_DIFF") == 1
    wald = [r for r in rows if r["level"] == "WALD"]
    assert len(wald) == 1 and wald[0]["group"] == "female df=1"
    gates = [r["group"] for r in rows if r["level"] == "GATE"]
    assert gates == ["female=0", "female=1"]
    support = [r for r in rows if r["level"] == "SUPPORT"]
    assert len(support) == 1 and 0 <= float(support[0]["estimate"]) < 1
    (s,) = _rows(tmp_path / "iate_summary.csv")
    total = float(s["share_neg_pct"]) + float(s["share_zero_pct"]) + float(s["share_pos_pct"])
    assert total == pytest.approx(100.0)
    assert "support: discarded" in (tmp_path / "effects_summary.txt").read_text()
    assert len(_rows(tmp_path / "iates.csv")) > 0


def test_effects_missing_group_variable(trained, tmp_path):
    root, _ = trained
    cfg = _write(tmp_path / "e.cfg", forest=root / "run" / "forest.bin", gates="shoe_size")
    assert main(["effects", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 3


def test_support_and_balance(trained, tmp_path):
    root, _ = trained
    cfg = _write(tmp_path / "s.cfg", forest=root / "run" / "forest.bin")
    assert main(["support", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 0
    ps = _rows(tmp_path / "propensity.csv")
    assert set(ps[0]) == {"b_index", "p_0", "p_1", "retained"}
    assert main(["balance", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 0
    bal = _rows(tmp_path / "balance_1-0.csv")
    assert [r["variable"] for r in bal][:2] == ["female", "age"]


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("n_trees = 5\nbogus = 1\n")
    assert main(["train", "--config", str(bad)]) == 2
    assert "bad.cfg:2: unknown key 'bogus'" in capsys.readouterr().err
    bad.write_text("n_trees = five\n")
    with pytest.raises(ConfigError, match=":1: cannot read"):
        read_config(bad)
    bad.write_text("n_trees = 5\nn_trees = 6\n")
    with pytest.raises(ConfigError, match="duplicate"):
        read_config(bad)
    bad.write_text("just words\n")
    with pytest.raises(ConfigError, match="expected"):
        read_config(bad)
    assert main(["train", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_data_errors(tmp_path):
    cfg = _write(tmp_path / "t.cfg", data="missing.csv", features="a")
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 3
    (tmp_path / "x.csv").write_text("a,d,y\n1,0,1\n2,1,2\n3,0,1\n4,1,5\n")
    cfg = _write(tmp_path / "t.cfg", data="x.csv", features="b")
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 3


def test_parse_estimator():
    assert parse_estimator("onef_mce.penalty.lc2") == {"estimator": "onef_mce", "penalty": True,
                                                       "lc_folds": 2}
    assert parse_estimator("onef_vart")["penalty"] is False
    with pytest.raises(ConfigError):
        parse_estimator("onef.fast")
    with pytest.raises(ConfigError):
        parse_estimator("xgboost")


def test_simulate_smoke(tmp_path):
    cfg = _write(tmp_path / "sim.cfg", replications=3, train_n=300, population_size=3000,
                 validation_size=200, n_trees=20, estimators="onef_mce, onef_vart",
                 gate_vars="female", raw_dump="yes", seed=2)
    t0 = time.perf_counter()
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / "a")]) == 0
    assert time.perf_counter() - t0 < 60
    from mcforest.emcs import METRIC_COLUMNS
    with open(tmp_path / "a" / "metrics.csv") as fh:
        header = next(csv.reader(fh))
    assert tuple(header) == METRIC_COLUMNS
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / "b")]) == 0
    for name in ["metrics.csv", "metrics_summary.txt", "replications.csv"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
