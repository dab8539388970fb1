"""Simulation design with factors, sparse idiosyncratic links and observed covariates.

Unit 0 is the treated unit.  For every unit ``i`` and period ``t``::

    Z_it = delta_it + gamma_i' W_t + lambda_i' F_t + U_it
    F_t  = 0.8 F_{t-1} + V_t,          V_t ~ N(0, 0.25 I)
    U_0t = beta' U_{-0,t} + eps_0t,    U_it = eps_it otherwise

with ``W_t = (1, t, x1_t, x2_t)`` shared by all units.  Monte Carlo studies
built on it live in :func:`run_monte_carlo` and :func:`mse_ratio_study`.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .counterfactual import FactorOptions, LassoOptions, MethodSpec, fit
from .detrend import DesignSpec
from .errors import FarmTreatError, ValidationError
from .inference import resample_test
from .panel import Panel

__all__ = [
    "ALPHAS",
    "DgpParams",
    "DgpTruth",
    "McReport",
    "generate",
    "mse_ratio_study",
    "replication_rng",
    "run_monte_carlo",
    "simulation_design",
]

logger = logging.getLogger(__name__)

ALPHAS = (0.01, 0.05, 0.10)


@dataclass(frozen=True)
class DgpParams:
    """Parameters of the simulation design.

    ``beta`` is ``"sparse"`` (first two links 0.5, the rest 0), ``"zero"``,
    or an explicit vector of length ``n - 1``.  ``eps_var_treated`` defaults
    to 0.25 when any link is nonzero and 1 otherwise.
    """

    T0: int = 100
    n: int = 100
    T2: int = 1
    n_factors: int = 2
    factor_ar: float = 0.8
    factor_innov_var: float = 0.25
    eps_var_treated: float | None = None
    eps_var_control: float = 1.0
    beta: object = "sparse"
    loading_control: tuple = (2.0, 1.0)  # mean, variance
    loading_treated: tuple = (-6.0, 0.04)
    delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.T0 < 2 or self.T2 < 1:
            raise ValidationError("need T0 >= 2 and T2 >= 1")
        if self.n < 2:
            raise ValidationError("need at least one control unit")
        if not abs(self.factor_ar) < 1:
            raise ValidationError("factor_ar must be inside (-1, 1)")
        variances = [self.factor_innov_var, self.eps_var_control,
                     self.loading_control[1], self.loading_treated[1]]
        if self.eps_var_treated is not None:
            variances.append(self.eps_var_treated)
        if min(variances) <= 0:
            raise ValidationError("all variances must be positive")
        self.beta_vector()

    @property
    def T(self) -> int:
        return self.T0 + self.T2

    def beta_vector(self) -> np.ndarray:
        p = self.n - 1
        if isinstance(self.beta, str):
            b = np.zeros(p)
            if self.beta == "sparse":
                b[: min(2, p)] = 0.5
            elif self.beta != "zero":
                raise ValidationError(f"unknown beta setting {self.beta!r}")
            return b
        b = np.asarray(self.beta, dtype=float)
        if b.shape != (p,):
            raise ValidationError(f"beta must have length {p}")
        return b

    def treated_eps_var(self) -> float:
        if self.eps_var_treated is not None:
            return self.eps_var_treated
        return 0.25 if np.any(self.beta_vector() != 0) else 1.0


@dataclass(frozen=True)
class DgpTruth:
    gammas: np.ndarray  # (n, 4)
    loadings: np.ndarray  # (n, r)
    factors: np.ndarray  # (T, r)
    idios: np.ndarray  # (n, T)
    W: np.ndarray  # (T, 4)
    beta: np.ndarray


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent stream for replication ``rep`` of a study seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))


def generate(params: DgpParams, rng: np.random.Generator | None = None, return_truth: bool = False):
    """Draw one panel.  Unit 0 is treated at ``t0 = T0``.

    Draws do not depend on ``delta``: the same seed with a different effect
    size changes only cell ``(0, T0)`` (0-based).
    """
    if rng is None:
        rng = np.random.default_rng(params.seed)
    T, n, r = params.T, params.n, params.n_factors
    rho = params.factor_ar
    sd_v = math.sqrt(params.factor_innov_var)

    x = rng.normal(1.0, 1.0, size=(T, 2))
    t = np.arange(1, T + 1, dtype=float)
    W = np.column_stack([np.ones(T), t, x])

    gam = np.column_stack([
        rng.normal(0.0, 1.0, n),
        rng.uniform(-5.0, 5.0, n),
        rng.normal(0.5, 1.0, (n, 2)),
    ])

    F = np.empty((T, r))
    F[0] = rng.normal(0.0, sd_v / math.sqrt(1.0 - rho**2), r)
    innov = rng.normal(0.0, sd_v, (T, r))
    for s in range(1, T):
        F[s] = rho * F[s - 1] + innov[s]

    mc, vc = params.loading_control
    mt, vt = params.loading_treated
    lam = np.empty((n, r))
    lam[0] = rng.normal(mt, math.sqrt(vt), r)
    lam[1:] = rng.normal(mc, math.sqrt(vc), (n - 1, r))

    eps = rng.normal(0.0, 1.0, (n, T))
    eps[1:] *= math.sqrt(params.eps_var_control)
    eps[0] *= math.sqrt(params.treated_eps_var())
    beta = params.beta_vector()
    U = eps
    U[0] = beta @ U[1:] + eps[0]

    Z = gam @ W.T + lam @ F.T + U
    Z[0, params.T0] += params.delta

    panel = Panel(
        outcomes=Z,
        unit_ids=[f"u{i:04d}" for i in range(n)],
        time_index=np.arange(1, T + 1),
        covariates={"x1": np.broadcast_to(x[:, 0], (n, T)), "x2": np.broadcast_to(x[:, 1], (n, T))},
        treated_units=(0,),
        t0=params.T0,
    )
    if return_truth:
        return panel, DgpTruth(gam, lam, F, U, W, beta)
    return panel


def simulation_design() -> DesignSpec:
    """First-stage design matching the simulated covariates."""
    return DesignSpec(intercept=True, linear_trend=True, extra_covariates=("x1", "x2"))


def method_spec(method: str, sample: str) -> MethodSpec:
    design = simulation_design()
    if method == "farmtreat":
        return MethodSpec(method, sample, design, FactorOptions(), LassoOptions())
    if method == "arco":
        return MethodSpec(method, sample, design, None, LassoOptions())
    if method == "pcr":
        return MethodSpec(method, sample, design, FactorOptions(), None)
    return MethodSpec(method, sample, design)


@dataclass
class McReport:
    """Per-cell summaries keyed by ``(method, sample, T0, n)``."""

    cells: dict
    n_replications: int
    seed: int
    delta: float
    beta: object
    failures: dict = field(default_factory=dict)

    def cell(self, method, T0, n, sample="pre_only") -> dict:
        return self.cells[(method, sample, T0, n)]

    def to_dict(self) -> dict:
        return {
            "n_replications": self.n_replications,
            "seed": self.seed,
            "delta": self.delta,
            "beta": self.beta if isinstance(self.beta, str) else list(self.beta),
            "cells": [
                {"method": m, "sample": s, "T0": T0, "n": n, **v}
                for (m, s, T0, n), v in sorted(self.cells.items())
            ],
            "failures": [
                {"T0": T0, "n": n, "count": c} for (T0, n), c in sorted(self.failures.items())
            ],
        }

    def rows(self) -> list[dict]:
        """Flat rows, one per (cell, method, sample), ready for a results table."""
        out = []
        for (m, s, T0, n), v in sorted(self.cells.items(), key=lambda kv: (kv[0][2], kv[0][3], kv[0][0], kv[0][1])):
            row = {"T": T0, "n": n, "method": m, "sample": s,
                   "mean": v["mean"], "median": v["median"], "mse": v["mse"]}
            for a in ALPHAS:
                row[f"reject_{a:.2f}"] = v["rejection"][f"{a:.2f}"]
            row["n_ok"] = v["n_ok"]
            out.append(row)
        return out


def _one_replication(params: DgpParams, rep: int, seed: int, methods, samples, kind):
    # single-threaded BLAS keeps every replication bit-identical wherever it runs
    with threadpool_limits(limits=1):
        return _replicate(params, rep, seed, methods, samples, kind)


def _replicate(params, rep, seed, methods, samples, kind):
    panel = generate(params, replication_rng(seed, rep))
    out = {}
    for m in methods:
        for s in samples:
            try:
                f = fit(panel, method_spec(m, s))
                rep_ = resample_test(f, kind=kind)
                out[(m, s)] = (float(f.effects[0]), float(rep_.p_value))
            except FarmTreatError as exc:
                logger.warning("replication %d (%s, %s) failed: %s", rep, m, s, exc)
                out[(m, s)] = None
    return out


def _summarise(values, pvals, delta):
    v = np.asarray(values)
    k = v.size
    mean = math.fsum(v) / k
    mse = math.fsum((v - delta) ** 2) / k
    p = np.asarray(pvals)
    return {
        "mean": mean,
        "median": float(np.median(v)),
        "mse": mse,
        "se_mean": float(np.std(v, ddof=1) / math.sqrt(k)) if k > 1 else float("nan"),
        "rejection": {f"{a:.2f}": float(np.mean(p <= a)) for a in ALPHAS},
        "n_ok": k,
    }


def default_threads() -> int:
    env = os.environ.get("FARMTREAT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_monte_carlo(
    grid: Sequence[tuple],
    methods: Sequence[str] = ("farmtreat",),
    n_reps: int = 500,
    seed: int = 0,
    delta: float = 0.0,
    beta="sparse",
    samples: Sequence[str] = ("pre_only", "full_sample"),
    kind: str = "sum_sq",
    threads: int | None = None,
    min_reps: int = 50,
) -> McReport:
    """Monte Carlo over ``(T0, n)`` cells with one post-intervention period.

    Replication ``r`` draws its panel from the stream ``(seed, r)``, so all
    methods and samples see the same data and results do not depend on
    ``threads``.  Failed fits are dropped; more than 5% failures in a cell
    raises.
    """
    if n_reps < min_reps:
        raise ValidationError(f"n_reps must be at least {min_reps}")
    threads = default_threads() if threads is None else max(1, int(threads))
    cells, failures = {}, {}
    for T0, n in grid:
        params = DgpParams(T0=int(T0), n=int(n), delta=delta, beta=beta, seed=seed)
        if threads > 1:
            from joblib import Parallel, delayed

            results = Parallel(n_jobs=threads)(
                delayed(_one_replication)(params, r, seed, methods, samples, kind) for r in range(n_reps)
            )
        else:
            results = [_one_replication(params, r, seed, methods, samples, kind) for r in range(n_reps)]
        n_fail = 0
        for m in methods:
            for s in samples:
                ok = [res[(m, s)] for res in results if res[(m, s)] is not None]
                n_fail = max(n_fail, n_reps - len(ok))
                if len(ok) < n_reps * 0.95:
                    raise FarmTreatError(
                        f"{n_reps - len(ok)} of {n_reps} replications failed for {m}/{s} at T0={T0}, n={n}"
                    )
                est, pv = zip(*ok)
                cells[(m, s, int(T0), int(n))] = _summarise(est, pv, delta)
        failures[(int(T0), int(n))] = n_fail
    return McReport(cells, n_reps, seed, delta, beta, failures)


def mse_ratio_study(grid, n_reps: int = 500, seed: int = 0, beta="zero", threads=None) -> dict:
    """MSE(farmtreat) / MSE(pcr) per cell under the null, pre-intervention fits."""
    rep = run_monte_carlo(grid, ("farmtreat", "pcr"), n_reps, seed, delta=0.0, beta=beta,
                          samples=("pre_only",), threads=threads)
    return {
        (T0, n): rep.cell("farmtreat", T0, n)["mse"] / rep.cell("pcr", T0, n)["mse"]
        for T0, n in grid
    }
