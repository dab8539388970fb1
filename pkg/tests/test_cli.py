import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from farmtreat.cli import KEYS, build_parser, main, to_json
from farmtreat.panel import Panel, save_panel
from farmtreat.simulation import DgpParams, generate

from conftest import twin_panel

TWIN = ["--method", "arco", "--design.intercept", "false", "--lasso.penalty", "1e-10",
        "--t0", "40", "--treated_units", "treated"]


@pytest.fixture
def twin_csv(tmp_path):
    path = tmp_path / "twin.csv"
    save_panel(twin_panel(), path)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_estimate_perfect_twin(twin_csv, tmp_path):
    out = tmp_path / "est"
    assert main(["estimate", "--input", str(twin_csv), "--out", str(out), *TWIN]) == 0
    rep = json.loads((out / "units" / "treated.json").read_text())
    assert abs(rep["avg_effect"]) <= 1e-6
    assert all(abs(e["delta"]) <= 1e-6 for e in rep["effects"])
    rows = read_csv(out / "effects.csv")
    assert list(rows[0]) == ["unit", "t", "actual", "counterfactual", "effect", "post"]
    assert len(rows) == 60
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "estimate" and man["config"]["t0"] == "40"
    assert "version" in man


def test_infer_perfect_twin(twin_csv, tmp_path):
    out = tmp_path / "inf"
    assert main(["infer", "--input", str(twin_csv), "--out", str(out), *TWIN]) == 0
    rep = json.loads((out / "inference.json").read_text())["units"][0]
    assert rep["test"]["p_value"] >= 0.8


def test_missing_t0(twin_csv, tmp_path, capsys):
    code = main(["estimate", "--input", str(twin_csv), "--treated_units", "treated", "--out", str(tmp_path)])
    assert code == 2
    assert "'t0'" in capsys.readouterr().err


def test_unknown_config_key(twin_csv, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("t0 = 40\nlasso.gird = 5\n")
    code = main(["estimate", "--config", str(cfg), "--input", str(twin_csv), "--treated_units", "treated",
                 "--out", str(tmp_path / "o")])
    assert code == 2
    assert "lasso.gird" in capsys.readouterr().err


def test_bad_value(twin_csv, tmp_path, capsys):
    code = main(["estimate", "--input", str(twin_csv), "--out", str(tmp_path), *TWIN, "--lasso.grid", "many"])
    assert code == 2
    assert "lasso.grid" in capsys.readouterr().err


def test_config_flag_parity(twin_csv, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        f"input = {twin_csv}\nt0 = 40\ntreated_units = treated\nmethod = arco\n"
        "design.intercept = false\nlasso.penalty = 1e-10\n"
    )
    assert main(["estimate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["estimate", "--input", str(twin_csv), "--out", str(tmp_path / "b"), *TWIN]) == 0
    a = (tmp_path / "a" / "units" / "treated.json").read_bytes()
    b = (tmp_path / "b" / "units" / "treated.json").read_bytes()
    assert a == b
    # flags override the file
    assert main(["estimate", "--config", str(cfg), "--method", "before_after", "--out", str(tmp_path / "c")]) == 0
    rep = json.loads((tmp_path / "c" / "units" / "treated.json").read_text())
    assert rep["method"] == "before_after"


def test_estimate_recovers_effect(tmp_path):
    p = generate(DgpParams(T0=250, n=100, delta=2.0, seed=0))
    path = tmp_path / "dgp.csv"
    save_panel(p, path)
    out = tmp_path / "o"
    args = ["estimate", "--input", str(path), "--t0", "250", "--treated_units", "u0000",
            "--design.trend", "true", "--design.covariates", "x1,x2", "--out", str(out)]
    assert main(args) == 0
    rep = json.loads((out / "units" / "u0000.json").read_text())
    assert abs(rep["avg_effect"] - 2.0) <= 0.5


def test_numerical_failure_exit_code(tmp_path, capsys):
    y = np.tile(np.arange(1.0, 4.0)[:, None], (1, 30))
    path = tmp_path / "flat.csv"
    save_panel(Panel(y, ["a", "b", "c"], np.arange(1, 31)), path)
    code = main(["estimate", "--input", str(path), "--t0", "20", "--treated_units", "a", "--out", str(tmp_path)])
    assert code == 3
    assert "degenerate" in capsys.readouterr().err


def test_idio(tmp_path):
    p = generate(DgpParams(T0=120, n=30, seed=1))
    path = tmp_path / "dgp.csv"
    save_panel(p, path)
    out = tmp_path / "o"
    assert main(["idio", "--input", str(path), "--t0", "120", "--treated_units", "u0000",
                 "--design.trend", "true", "--idio.draws", "1000", "--out", str(out)]) == 0
    rep = json.loads((out / "idio.json").read_text())["units"][0]
    assert rep["n_draws"] == 1000 and 0 <= rep["p_value"] <= 1


def test_simulate_smoke(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--sim.grid", "100x100", "--sim.methods", "pcr", "--sim.samples", "pre_only",
                 "--sim.reps", "50", "--threads", "2", "--out", str(out)]) == 0
    rows = read_csv(out / "simulation.csv")
    assert len(rows) == 1 and rows[0]["method"] == "pcr" and rows[0]["T"] == "100"


def test_simulate_reps_below_minimum(tmp_path):
    assert main(["simulate", "--sim.reps", "1", "--out", str(tmp_path)]) == 2


def test_price_flags_positive_slope(tmp_path, capsys):
    reports = {"units": [
        {"unit": "a", "avg_effect": -4.0, "avg_counterfactual": 50.0, "test": {"p_value": 0.01}},
        {"unit": "b", "avg_effect": 2.0, "avg_counterfactual": 40.0, "test": {"p_value": 0.01}},
    ]}
    (tmp_path / "r.json").write_text(json.dumps(reports))
    (tmp_path / "attr.csv").write_text("unit,n_stores,price_change,pre_price\na,1,1,10\nb,2,1,4\n")
    out = tmp_path / "o"
    code = main(["price", "--price.reports", str(tmp_path / "r.json"),
                 "--price.attributes", str(tmp_path / "attr.csv"), "--out", str(out)])
    assert code == 0
    rows = {r["unit"]: r for r in read_csv(out / "pricing.csv")}
    assert rows["b"]["flag"] == "non-negative slope" and rows["b"]["optimal_price"] == ""
    assert float(rows["a"]["optimal_price"]) == pytest.approx(11.25)
    assert rows["a"]["kept"] == "1" and rows["b"]["kept"] == "0"


def test_randomize(tmp_path):
    rng = np.random.default_rng(0)
    lines = ["unit_id,pop,hdi"] + [f"m{i:02d},{rng.normal():.6f},{rng.normal():.6f}" for i in range(20)]
    (tmp_path / "z.csv").write_text("\n".join(lines) + "\n")
    out = tmp_path / "o"
    assert main(["randomize", "--covariates", str(tmp_path / "z.csv"), "--k", "10", "--seed", "3",
                 "--out", str(out)]) == 0
    rows = read_csv(out / "assignment.csv")
    assert list(rows[0])[:2] == ["unit_id", "group"]
    assert sum(r["group"] == "treatment" for r in rows) == 10


def test_repeat_runs_identical(twin_csv, tmp_path):
    for name in ("a", "b"):
        assert main(["infer", "--input", str(twin_csv), "--out", str(tmp_path / name), *TWIN]) == 0
    for f in ("inference.json", "effects.csv", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes().replace(b"/a", b"") == (tmp_path / "b" / f).read_bytes().replace(b"/b", b"")


def test_help_lists_every_key():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    for name, p in sub.items():
        text = p.format_help()
        for key in KEYS:
            if name in key.commands:
                assert f"--{key.name}" in text


def test_json_serialisation():
    x = 0.1 + 0.2
    text = to_json({"x": x, "nan": float("nan"), "i": 3, "f": 2.0, "l": [1.5, None], "b": True})
    back = json.loads(text)
    assert back["x"] == x and back["nan"] is None and back["i"] == 3 and back["b"] is True
    assert "0.30000000000000004" in text and '"f": 2.0' in text


def test_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "farmtreat.cli", "estimate", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "--factor.strategy" in res.stdout


def test_time_dummies_and_aliases(tmp_path):
    p = generate(DgpParams(T0=60, n=12, T2=2, seed=2))
    promo = np.zeros((12, 62))
    promo[:, 10:20] = 1.0
    p = Panel(p.outcomes + 3.0 * promo, p.unit_ids, p.time_index, {**p.covariates, "promo": promo})
    path = tmp_path / "d.csv"
    save_panel(p, path)
    out = tmp_path / "o"
    assert main(["estimate", "--input", str(path), "--t0", "60", "--treated_units", "u0000",
                 "--design.dummies", "promo", "--method", "pcr", "--out", str(out)]) == 0
    rep = json.loads((out / "units" / "u0000.json").read_text())
    assert rep["design_columns"] == ["intercept", "promo"]
    assert main(["simulate", "--grid", "40x15", "--methods", "pcr", "--reps", "50",
                 "--sim.samples", "pre_only", "--out", str(tmp_path / "s")]) == 0


def test_dummy_must_be_shared(tmp_path, capsys):
    p = generate(DgpParams(T0=30, n=5, seed=2))
    d = np.zeros((5, 31))
    d[0, 3] = 1.0
    p = Panel(p.outcomes, p.unit_ids, p.time_index, {"d": d})
    save_panel(p, tmp_path / "d.csv")
    code = main(["estimate", "--input", str(tmp_path / "d.csv"), "--t0", "30", "--treated_units", "u0000",
                 "--design.dummies", "d", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "differs across units" in capsys.readouterr().err
