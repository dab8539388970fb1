"""Command-line interface.

Every option is a dotted key (``factor.strategy``, ``lasso.grid``, ...) that
can be given as a flag (``--factor.strategy impute``) or in a ``key = value``
file passed with ``--config``; flags win over the file.  Each run writes a
``manifest.json`` with the resolved configuration next to its outputs.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .counterfactual import FactorOptions, LassoOptions, MethodSpec, fit_all
from .detrend import DesignSpec
from .errors import FarmTreatError, NumericalError, StageError, ValidationError
from .idio_test import idio_contribution_test
from .inference import resample_test
from .panel import format_time, load_config, load_panel
from .pricing import (
    PricingInputs,
    demand_slope,
    elasticity,
    optimal_price,
    price_discrepancy,
    screen_units,
    summary_row,
)
from .randomizer import BalanceProblem, solve_balance
from .simulation import default_threads, run_monte_carlo

logger = logging.getLogger("farmtreat")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


# ---------------------------------------------------------------- values


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _list(s):
    if isinstance(s, (list, tuple)):
        return list(s)
    return [x.strip() for x in str(s).split(",") if x.strip()]


def _opt_float(s):
    if s is None or str(s).strip().lower() in ("", "none", "auto"):
        return None
    return float(s)


def _opt_int(s):
    if s is None or str(s).strip().lower() in ("", "none", "auto"):
        return None
    return int(s)


def _grid(s):
    out = []
    for cell in _list(s):
        m = re.fullmatch(r"(\d+)\s*[x:]\s*(\d+)", cell)
        if not m:
            raise ValueError(f"grid cell {cell!r} is not of the form T0xN")
        out.append((int(m.group(1)), int(m.group(2))))
    if not out:
        raise ValueError("empty grid")
    return out


@dataclass(frozen=True)
class Key:
    name: str
    conv: object
    default: object
    help: str
    commands: tuple
    aliases: tuple = ()


_FIT = ("estimate", "infer", "idio")
_PANEL = ("estimate", "infer", "idio")

KEYS = [
    Key("input", str, None, "long-format panel CSV (unit,time,value[,covariates])", _PANEL),
    Key("schema.unit", str, "unit", "unit column", _PANEL),
    Key("schema.time", str, "time", "time column", _PANEL),
    Key("schema.value", str, "value", "outcome column", _PANEL),
    Key("missing", str, "reject", "missing-cell policy: reject, zero_fill, drop_unit", _PANEL),
    Key("t0", str, None, "last pre-intervention period (time label)", _PANEL),
    Key("treated_units", _list, None, "comma-separated treated unit ids", _PANEL),
    Key("method", str, "farmtreat", "farmtreat, arco, pcr or before_after", ("estimate", "infer")),
    Key("sample", str, "pre_only", "pre_only or full_sample", _FIT),
    Key("design.intercept", _bool, True, "include an intercept", _FIT),
    Key("design.trend", _bool, False, "include a linear trend", _FIT),
    Key("design.weekday", _bool, False, "include Monday..Saturday dummies (dates only)", _FIT),
    Key("design.dummies", _list, [], "comma-separated 0/1 panel columns, same for every unit", _FIT),
    Key("design.covariates", _list, [], "comma-separated covariate columns", _FIT),
    Key("factor.strategy", str, "exclude_treated", "exclude_treated, impute or zero_fill_post", _FIT),
    Key("factor.rmax", _opt_int, None, "largest rank considered by the selector", _FIT),
    Key("factor.rank", _opt_int, None, "fixed factor rank (skips the selector)", _FIT),
    Key("factor.joint_design", _bool, True, "refit treated design terms jointly with the loading", _FIT),
    Key("lasso.penalty", _opt_float, None, "fixed penalty xi (default: BIC)", ("estimate", "infer")),
    Key("lasso.grid", int, 100, "penalty grid size", ("estimate", "infer")),
    Key("lasso.rule", str, "bic", "penalty rule", ("estimate", "infer")),
    Key("lasso.max_active_frac", _opt_float, 0.5, "BIC candidates keep |active| <= frac*T0", ("estimate", "infer")),
    Key("lasso.partial_design", _bool, True, "leave the treated design columns unpenalised", ("estimate", "infer")),
    Key("infer.kind", str, "sum_sq", "test statistic: sum_sq or sum_abs", ("infer", "simulate")),
    Key("alpha", float, 0.10, "significance level", ("infer", "price")),
    Key("idio.kernel", str, "bartlett", "long-run covariance kernel", ("idio",)),
    Key("idio.h", _opt_float, None, "kernel bandwidth (default: Newey-West rule)", ("idio",)),
    Key("idio.draws", int, 5000, "bootstrap draws", ("idio",)),
    Key("sim.grid", _grid, [(100, 100)], "cells as T0xN, comma-separated", ("simulate",), ("--grid",)),
    Key("sim.methods", _list, ["farmtreat", "arco", "pcr"], "methods to compare", ("simulate",), ("--methods",)),
    Key("sim.reps", int, 500, "replications per cell", ("simulate",), ("--reps",)),
    Key("sim.delta", float, 0.0, "treatment effect at T0+1", ("simulate",)),
    Key("sim.beta", str, "sparse", "idiosyncratic links: sparse or zero", ("simulate",)),
    Key("sim.samples", _list, ["pre_only", "full_sample"], "estimation samples", ("simulate",)),
    Key("price.reports", str, None, "inference JSON written by 'infer'", ("price",)),
    Key("price.attributes", str, None, "CSV: unit,n_stores,price_change,pre_price[,taxes,costs]", ("price",)),
    Key("price.taxes", float, 0.0, "default tax rate", ("price",), ("--taxes",)),
    Key("price.costs", float, 0.0, "default unit cost", ("price",), ("--costs",)),
    Key("price.direction", _opt_int, None, "expected sign of the effect (-1/1); default from price change", ("price",)),
    Key("randomize.covariates", str, None, "CSV with one row per unit", ("randomize",), ("--covariates",)),
    Key("randomize.unit", str, "unit_id", "unit id column", ("randomize",)),
    Key("randomize.k", int, None, "size of the first group", ("randomize",), ("--k",)),
    Key("randomize.restarts", int, 20, "local-search restarts", ("randomize",)),
    Key("randomize.standardize", _bool, True, "z-score covariates first", ("randomize",)),
    Key("seed", int, 0, "random seed", ("idio", "simulate", "randomize")),
]
_COMMON = [
    Key("out", str, "farmtreat_out", "output directory", ()),
    Key("threads", _opt_int, None, "worker threads (default: FARMTREAT_THREADS or all cores)", ()),
]
_BY_NAME = {k.name: k for k in KEYS + _COMMON}
_REQUIRED = {
    "estimate": ("input", "t0", "treated_units"),
    "infer": ("input", "t0", "treated_units"),
    "idio": ("input", "t0", "treated_units"),
    "simulate": (),
    "price": ("price.reports", "price.attributes"),
    "randomize": ("randomize.covariates", "randomize.k"),
}


def _keys_for(cmd):
    return [k for k in KEYS if cmd in k.commands] + _COMMON


def resolve_config(cmd, cli_values: dict, config_path=None) -> dict:
    """Defaults, then the config file, then flags.  Raises on unknown keys."""
    allowed = {k.name: k for k in _keys_for(cmd)}
    raw = {}
    if config_path:
        for key, value in load_config(config_path).items():
            if key not in allowed:
                raise ValidationError(f"unknown key {key!r} for '{cmd}' in {config_path}")
            raw[key] = value
    raw.update({k: v for k, v in cli_values.items() if v is not None})
    out = {}
    for name, key in allowed.items():
        if name in raw:
            try:
                out[name] = key.conv(raw[name])
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"bad value for {name!r}: {exc}") from None
        else:
            out[name] = key.default
    for name in _REQUIRED[cmd]:
        if out.get(name) in (None, [], ""):
            raise ValidationError(f"missing required key {name!r}")
    if out["threads"] is None:
        try:
            out["threads"] = default_threads()
        except ValueError:
            raise ValidationError("FARMTREAT_THREADS must be an integer") from None
    if out["threads"] < 1:
        raise ValidationError("threads must be >= 1")
    return out


# ---------------------------------------------------------------- output


def _num(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def to_json(obj, indent=2, _level=0) -> str:
    """JSON text with floats at 17 significant digits (round-trip exact)."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(to_json(v, indent, _level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_, int, float, np.integer, np.floating)):
        return _num(obj)
    return json.dumps(str(obj))


def write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(obj) + "\n", encoding="utf-8")


def write_csv(path: Path, rows: list[dict], columns=None):
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = columns or (list(rows[0]) if rows else [])
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else _num(v)
    return v


def _safe_name(unit):
    return re.sub(r"[^A-Za-z0-9_.-]", "_", str(unit))


def write_manifest(out: Path, cmd: str, cfg: dict):
    manifest = {
        "tool": "farmtreat",
        "version": __version__,
        "command": cmd,
        "seed": cfg.get("seed"),
        "config": {k: (list(map(list, v)) if k == "sim.grid" else v) for k, v in sorted(cfg.items())},
    }
    write_json(out / "manifest.json", manifest)


# ---------------------------------------------------------------- commands


def _panel(cfg):
    schema = {"unit": cfg["schema.unit"], "time": cfg["schema.time"], "value": cfg["schema.value"]}
    panel = load_panel(cfg["input"], schema=schema, policy=cfg["missing"])
    t0 = panel.resolve_t0(cfg["t0"])
    return panel.with_treatment(cfg["treated_units"], t0)


def _time_dummies(panel, names):
    out = {}
    for name in names:
        if name not in panel.covariates:
            raise ValidationError(f"dummy column {name!r} not in the panel")
        a = panel.covariates[name]
        if not np.all(a == a[0]):
            raise ValidationError(f"dummy column {name!r} differs across units")
        out[name] = a[0]
    return out


def _method_spec(cfg, method=None, panel=None):
    method = method or cfg.get("method", "farmtreat")
    design = DesignSpec(
        intercept=cfg["design.intercept"],
        linear_trend=cfg["design.trend"],
        weekday_dummies=cfg["design.weekday"],
        custom_dummies=_time_dummies(panel, cfg["design.dummies"]) if panel is not None else {},
        extra_covariates=tuple(cfg["design.covariates"]),
    )
    factor = lasso = None
    if method in ("farmtreat", "pcr"):
        factor = FactorOptions(cfg["factor.strategy"], cfg["factor.rmax"], cfg["factor.rank"],
                               cfg["factor.joint_design"])
    if method in ("farmtreat", "arco"):
        lasso = LassoOptions(
            penalty=cfg["lasso.penalty"], grid=cfg["lasso.grid"], rule=cfg["lasso.rule"],
            max_active_frac=cfg["lasso.max_active_frac"], partial_design=cfg["lasso.partial_design"],
        )
    return MethodSpec(method, cfg["sample"], design, factor, lasso)


def _unit_report(panel, f) -> dict:
    times = [format_time(t) for t in panel.time_index]
    rep = {
        "unit": f.unit_id,
        "method": f.method.method,
        "sample": f.method.sample,
        "t0": times[f.t0 - 1],
        "avg_effect": f.avg_effect,
        "avg_counterfactual": math.fsum(f.counterfactual_path) / len(f.counterfactual_path),
        "effects": [
            {"t": times[f.t0 + k], "actual": float(f.actual[f.t0 + k]),
             "counterfactual": float(c), "delta": float(d)}
            for k, (c, d) in enumerate(zip(f.counterfactual_path, f.effects))
        ],
        "gamma1": f.gamma1,
        "lambda1": f.lambda1,
        "theta1": {cid: float(v) for cid, v in zip(f.control_ids, f.theta1) if v != 0},
        "diagnostics": f.diagnostics,
    }
    if f.method.method != "before_after":
        rep["design_columns"] = f.method.design.column_names()
    return rep


def _effects_rows(panel, fits):
    times = [format_time(t) for t in panel.time_index]
    rows = []
    for f in fits.values():
        pred = f.fitted()
        for t in range(len(f.actual)):
            rows.append({
                "unit": f.unit_id, "t": times[t], "actual": float(f.actual[t]),
                "counterfactual": float(pred[t]), "effect": float(f.actual[t] - pred[t]),
                "post": int(t >= f.t0),
            })
    return rows


def cmd_estimate(cfg, out: Path) -> int:
    panel = _panel(cfg)
    fits = fit_all(panel, _method_spec(cfg, panel=panel))
    for uid, f in fits.items():
        write_json(out / "units" / f"{_safe_name(uid)}.json", _unit_report(panel, f))
    write_csv(out / "effects.csv", _effects_rows(panel, fits))
    for uid, f in fits.items():
        print(f"{uid}\tavg_effect={_num(f.avg_effect)}")
    return EXIT_OK


def cmd_infer(cfg, out: Path) -> int:
    panel = _panel(cfg)
    fits = fit_all(panel, _method_spec(cfg, panel=panel))
    reports = []
    for uid, f in fits.items():
        tr = resample_test(f, kind=cfg["infer.kind"])
        rep = _unit_report(panel, f)
        test = tr.to_dict()
        times = [format_time(t) for t in panel.time_index]
        for entry in test["per_period"]:
            entry["t"] = times[entry["t"] - 1]
        rep["test"] = test
        rep["reject"] = tr.p_value <= cfg["alpha"]
        reports.append(rep)
        print(f"{uid}\tavg_effect={_num(f.avg_effect)}\tp_value={_num(tr.p_value)}")
    write_json(out / "inference.json", {"alpha": cfg["alpha"], "kind": cfg["infer.kind"], "units": reports})
    write_csv(out / "effects.csv", _effects_rows(panel, fits))
    return EXIT_OK


def cmd_idio(cfg, out: Path) -> int:
    panel = _panel(cfg)
    # the factor stage alone: pcr fits carry the idiosyncratic components
    fits = fit_all(panel, _method_spec(cfg, method="pcr", panel=panel))
    results = []
    for uid, f in fits.items():
        rep = idio_contribution_test(
            f.factor_fit, n_draws=cfg["idio.draws"], seed=cfg["seed"], kernel=cfg["idio.kernel"],
            h=cfg["idio.h"], n_jobs=cfg["threads"],
        )
        results.append({"unit": uid, "factor_rank": f.factor_fit.rank, **rep.to_dict()})
        print(f"{uid}\tS={_num(rep.statistic)}\tp_value={_num(rep.p_value)}")
    write_json(out / "idio.json", {"units": results})
    return EXIT_OK


def cmd_simulate(cfg, out: Path) -> int:
    rep = run_monte_carlo(
        cfg["sim.grid"], methods=cfg["sim.methods"], n_reps=cfg["sim.reps"], seed=cfg["seed"],
        delta=cfg["sim.delta"], beta=cfg["sim.beta"], samples=cfg["sim.samples"],
        kind=cfg["infer.kind"], threads=cfg["threads"],
    )
    rows = rep.rows()
    write_csv(out / "simulation.csv", rows)
    write_json(out / "simulation.json", rep.to_dict())
    for r in rows:
        print(f"T={r['T']} n={r['n']} {r['method']}/{r['sample']}: mean={r['mean']:.4f} "
              f"mse={r['mse']:.4f} reject@0.05={r['reject_0.05']:.3f}")
    return EXIT_OK


def cmd_price(cfg, out: Path) -> int:
    try:
        reports = json.loads(Path(cfg["price.reports"]).read_text(encoding="utf-8"))["units"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ValidationError(f"cannot read reports {cfg['price.reports']}: {exc}") from None
    path = Path(cfg["price.attributes"])
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    attrs = pd.read_csv(path, dtype={"unit": str})
    need = {"unit", "n_stores", "price_change", "pre_price"}
    if not need <= set(attrs.columns):
        raise ValidationError(f"attributes need columns {sorted(need)}")
    attrs = attrs.set_index("unit")

    rows = []
    for rep in reports:
        uid = str(rep["unit"])
        if uid not in attrs.index:
            raise ValidationError(f"unit {uid!r} missing from attributes")
        a = attrs.loc[uid]
        taxes = float(a["taxes"]) if "taxes" in attrs.columns else cfg["price.taxes"]
        costs = float(a["costs"]) if "costs" in attrs.columns else cfg["price.costs"]
        inp = PricingInputs(
            avg_effect=float(rep["avg_effect"]), n_stores=int(a["n_stores"]),
            price_change=float(a["price_change"]), pre_price=float(a["pre_price"]),
            avg_qty=float(rep["avg_counterfactual"]), taxes=taxes, costs=costs,
        )
        p = float(rep["test"]["p_value"]) if "test" in rep else float("nan")
        slope = demand_slope(inp)
        row = {"unit": uid, "avg_effect": inp.avg_effect, "p_value": p, "slope": slope,
               "elasticity": elasticity(inp, slope), "optimal_price": None, "discrepancy_pct": None, "flag": ""}
        if slope >= 0:
            row["flag"] = "non-negative slope"
            logger.warning("unit %s has a non-negative demand slope; no optimal price", uid)
        else:
            ps = optimal_price(inp, slope).price
            row["optimal_price"] = ps
            row["discrepancy_pct"] = price_discrepancy(ps, inp.pre_price)
        rows.append(row)

    direction = cfg["price.direction"]
    screened = screen_units(((r["unit"], r["avg_effect"], r["p_value"]) for r in rows), alpha=cfg["alpha"],
                            expected_sign=direction,
                            price_change=None if direction else _common_change(attrs, rows))
    kept = set(screened.kept)
    for r in rows:
        r["kept"] = int(r["unit"] in kept)
    write_csv(out / "pricing.csv", rows)
    sel = [r for r in rows if r["kept"] and r["optimal_price"] is not None]
    table = [
        {"statistic": "elasticity", **summary_row(r["elasticity"] for r in sel), "fraction": screened.fraction},
        {"statistic": "discrepancy_pct", **summary_row(r["discrepancy_pct"] for r in sel), "fraction": screened.fraction},
    ]
    write_csv(out / "pricing_summary.csv", table)
    print(f"kept {len(screened.kept)} of {len(rows)} units (fraction {screened.fraction:.4f})")
    return EXIT_OK


def _common_change(attrs, rows):
    changes = {np.sign(float(attrs.loc[r["unit"], "price_change"])) for r in rows}
    if len(changes) != 1:
        raise ValidationError("price changes differ in sign across units; set price.direction")
    return changes.pop()


def cmd_randomize(cfg, out: Path) -> int:
    path = Path(cfg["randomize.covariates"])
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    ucol = cfg["randomize.unit"]
    df = pd.read_csv(path, dtype={ucol: str})
    if ucol not in df.columns:
        raise ValidationError(f"column {ucol!r} not found in {path}")
    df = df.sort_values(ucol, kind="stable").reset_index(drop=True)
    cols = [c for c in df.columns if c != ucol]
    try:
        Z = df[cols].to_numpy(dtype=float)
    except ValueError as exc:
        raise ValidationError(f"non-numeric covariates: {exc}") from None
    prob = BalanceProblem(Z, cfg["randomize.k"], cfg["randomize.standardize"])
    a = solve_balance(prob, restarts=cfg["randomize.restarts"], seed=cfg["seed"])
    rows = [{"unit_id": u, "group": "treatment" if t else "control", "alpha": int(al)}
            for u, t, al in zip(df[ucol], a.treated, a.alpha)]
    write_csv(out / "assignment.csv", rows)
    write_json(out / "assignment.json", {"objective": a.objective, "method": a.method,
                                         "k": cfg["randomize.k"], "restarts": a.restarts})
    print(f"objective={_num(a.objective)} method={a.method}")
    return EXIT_OK


COMMANDS = {
    "estimate": (cmd_estimate, "fit counterfactuals for the treated units"),
    "infer": (cmd_infer, "fit and run the block-resampling test"),
    "idio": (cmd_idio, "test for idiosyncratic predictive power"),
    "simulate": (cmd_simulate, "Monte Carlo study on the simulation design"),
    "price": (cmd_price, "slopes, elasticities and optimal prices from inference reports"),
    "randomize": (cmd_randomize, "balanced two-group assignment"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="farmtreat", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"farmtreat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="key = value file; flags override it")
        p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
        for key in _keys_for(name):
            default = key.default
            if isinstance(default, list):
                default = ",".join("x".join(map(str, d)) if isinstance(d, tuple) else str(d) for d in default)
            p.add_argument(f"--{key.name}", *key.aliases, dest=key.name, default=None, metavar="VALUE",
                           help=f"{key.help} [default: {default}]")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cmd = args.command
    flags = {k.name: getattr(args, k.name) for k in _keys_for(cmd)}
    try:
        cfg = resolve_config(cmd, flags, args.config)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, cmd, cfg)
        return COMMANDS[cmd][0](cfg, out)
    except StageError as exc:
        code = EXIT_INVALID if isinstance(exc.cause, ValidationError) else EXIT_NUMERICAL
        print(f"farmtreat {cmd}: error: {exc}", file=sys.stderr)
        return code
    except ValidationError as exc:
        print(f"farmtreat {cmd}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, FarmTreatError) as exc:
        print(f"farmtreat {cmd}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
