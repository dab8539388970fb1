"""Counterfactual construction for a single treated unit and its nested baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .detrend import DesignSpec, DetrendResult, build_design, detrend_panel, ols_fit
from .errors import FarmTreatError, StageError, ValidationError
from .factors import STRATEGIES, FactorFit, fit_factor_stage
from .lasso import LassoProblem, select_penalty_bic
from .panel import Panel

__all__ = [
    "METHODS",
    "CounterfactualFit",
    "FactorOptions",
    "LassoOptions",
    "MethodSpec",
    "avg_effect",
    "fit",
    "fit_all",
]

METHODS = ("farmtreat", "arco", "pcr", "before_after")
SAMPLES = ("pre_only", "full_sample")


@dataclass(frozen=True)
class FactorOptions:
    strategy: str = "exclude_treated"
    r_max: int | None = None
    rank: int | None = None  # overrides the eigenvalue-ratio selector
    joint_design: bool = True  # refit treated design terms with the loading

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown factor strategy {self.strategy!r}")
        if self.rank is not None and self.rank < 0:
            raise ValidationError("factor rank must be >= 0")


@dataclass(frozen=True)
class LassoOptions:
    penalty: float | None = None  # fixed xi; None selects by the rule
    grid: int = 100
    rule: str = "bic"
    ratio: float = 1e-4
    max_active_frac: float | None = 0.5  # BIC candidates keep |active| <= frac * T0
    partial_design: bool = True  # leave the treated design columns unpenalised

    def __post_init__(self):
        if self.rule != "bic":
            raise ValidationError(f"unknown penalty rule {self.rule!r}")
        if self.penalty is not None and not self.penalty >= 0:
            raise ValidationError("lasso penalty must be >= 0")
        if self.grid < 2:
            raise ValidationError("lasso grid must have at least 2 points")


@dataclass(frozen=True)
class MethodSpec:
    """Which estimator to run and on which sample.

    ``factor`` and ``lasso`` default to their option defaults for the
    methods that use them; passing them to a method that has no such stage
    is an error.
    """

    method: str = "farmtreat"
    sample: str = "pre_only"
    design: DesignSpec = field(default_factory=DesignSpec)
    factor: FactorOptions | None = None
    lasso: LassoOptions | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}")
        if self.sample not in SAMPLES:
            raise ValidationError(f"unknown sample {self.sample!r}")
        if self.method in ("pcr", "before_after") and self.lasso is not None:
            raise ValidationError(f"{self.method} takes no lasso options")
        if self.method in ("arco", "before_after") and self.factor is not None:
            raise ValidationError(f"{self.method} takes no factor options")
        if self.method in ("farmtreat", "pcr") and self.factor is None:
            object.__setattr__(self, "factor", FactorOptions())
        if self.method in ("farmtreat", "arco") and self.lasso is None:
            object.__setattr__(self, "lasso", LassoOptions())


@dataclass(frozen=True)
class CounterfactualFit:
    """Fitted counterfactual for one treated unit.

    ``effects`` and ``counterfactual_path`` cover periods ``t0+1..T``;
    ``pre_residuals`` cover ``1..t0``.  The stored components reproduce the
    effects exactly: ``actual - (design @ gamma1 + factors @ lambda1 +
    control_idios.T @ theta1)``.
    """

    method: MethodSpec
    unit_id: str
    t0: int
    actual: np.ndarray  # treated outcomes over 1..T
    gamma1: np.ndarray
    lambda1: np.ndarray
    theta1: np.ndarray
    design: np.ndarray  # (T, k) treated design rows
    factors: np.ndarray  # (T, r)
    control_idios: np.ndarray  # (m, T) predictors entering theta1
    control_ids: tuple
    counterfactual_path: np.ndarray
    effects: np.ndarray
    avg_effect: float
    pre_residuals: np.ndarray
    diagnostics: dict
    factor_fit: FactorFit | None = None

    def fitted(self) -> np.ndarray:
        """Counterfactual prediction over all periods."""
        out = np.zeros(self.actual.size)
        if self.method.method == "before_after":
            return out + self.gamma1[0]
        if self.gamma1.size:
            out += self.design @ self.gamma1
        if self.lambda1.size:
            out += self.factors @ self.lambda1
        if self.theta1.size:
            out += self.control_idios.T @ self.theta1
        return out

    @property
    def outcome_scale(self) -> float:
        return float(np.max(np.abs(self.actual))) if self.actual.size else 0.0

    @property
    def active_controls(self) -> list:
        return [self.control_ids[j] for j in np.flatnonzero(self.theta1)]


def avg_effect(fit: CounterfactualFit) -> float:
    """Mean of the per-period effects."""
    if len(fit.effects) == 0:
        raise ValidationError("no post-intervention periods")
    return math.fsum(fit.effects) / len(fit.effects)


def _lasso_stage(X, y, opts: LassoOptions):
    prob = LassoProblem(X, y)
    if opts.penalty is not None:
        fit = prob.solve(opts.penalty)
        return fit, opts.penalty
    xi, path = select_penalty_bic(X, y, grid_size=opts.grid, ratio=opts.ratio, problem=prob,
                                  max_active_frac=opts.max_active_frac)
    chosen = next(f for x, f, _ in path if x == xi)
    return chosen, xi


def _stage(name, unit, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except StageError:
        raise
    except FarmTreatError as exc:
        raise StageError(name, unit, exc) from exc


def _before_after(panel, spec, i):
    z = panel.outcomes[i]
    t0 = panel.t0
    pre_mean = math.fsum(z[:t0]) / t0
    effects = z[t0:] - pre_mean
    return CounterfactualFit(
        method=spec,
        unit_id=panel.unit_ids[i],
        t0=t0,
        actual=z.copy(),
        gamma1=np.array([pre_mean]),
        lambda1=np.zeros(0),
        theta1=np.zeros(0),
        design=np.ones((z.size, 1)),
        factors=np.zeros((z.size, 0)),
        control_idios=np.zeros((0, z.size)),
        control_ids=(),
        counterfactual_path=np.full(z.size - t0, pre_mean),
        effects=effects,
        avg_effect=math.fsum(z[t0:]) / (z.size - t0) - pre_mean,
        pre_residuals=z[:t0] - pre_mean,
        diagnostics={"r2": 0.0},
    )


def _fit_one(panel: Panel, spec: MethodSpec, i: int, detrended: DetrendResult) -> CounterfactualFit:
    unit = panel.unit_ids[i]
    t0 = panel.t0
    n, T = panel.outcomes.shape
    last = t0 if spec.sample == "pre_only" else T
    controls = panel.controls
    z = panel.outcomes[i]
    r1 = detrended.residuals[i]
    diagnostics = {"detrend_r2": float(detrended.r_squared[i])}

    cov = {c: panel.covariates[c][i] for c in spec.design.extra_covariates if c in panel.covariates}
    window = np.arange(detrended.fit_windows[i][1])
    W = build_design(spec.design, panel.time_index, window, cov, rows=np.arange(T))
    gamma = detrended.gammas[i].copy()

    ffit = None
    lam = np.zeros(0)
    F = np.zeros((T, 0))
    if spec.method in ("farmtreat", "pcr"):
        fo = spec.factor
        ffit = _stage(
            "factor", unit, fit_factor_stage, detrended, i, t0,
            strategy=fo.strategy, r_max=fo.r_max, rank=fo.rank, controls=controls, sample=spec.sample,
            design=W if fo.joint_design else None,
        )
        lam, F = ffit.treated_loading, ffit.factors
        if ffit.design_adjustment.size:
            gamma = gamma + ffit.design_adjustment
        u1, Uc = ffit.idios[0], ffit.idios[1:]
        diagnostics["factor_rank"] = ffit.rank
        diagnostics["eigvals"] = ffit.eigvals.tolist()
    else:
        u1, Uc = r1, detrended.residuals[list(controls)]

    adj = None
    if spec.method in ("farmtreat", "arco"):
        X, y = Uc[:, :last].T, u1[:last]
        partial = spec.lasso.partial_design and W.shape[1] > 0
        if partial:
            # penalise only the peers: project the design out over the window
            Q, _ = np.linalg.qr(W[:last])
            X = X - Q @ (Q.T @ X)
            y = y - Q @ (Q.T @ y)
        lfit, xi = _stage("lasso", unit, _lasso_stage, X, y, spec.lasso)
        theta = lfit.theta
        if partial:
            adj = _stage("lasso", unit, ols_fit, W[:last], u1[:last] - Uc[:, :last].T @ theta)[0]
            gamma = gamma + adj
        diagnostics["penalty"] = float(xi)
        diagnostics["n_active"] = int(lfit.active_set.size)
    else:
        theta = np.zeros(len(controls))

    resid = u1 - Uc.T @ theta
    if adj is not None:
        resid = resid - W @ adj
    pre = resid[:t0]
    tss = float(np.sum((z[:t0] - z[:t0].mean()) ** 2))
    diagnostics["r2"] = 1.0 - float(pre @ pre) / tss if tss > 0 else 0.0
    effects = resid[t0:]
    out = CounterfactualFit(
        method=spec,
        unit_id=unit,
        t0=t0,
        actual=z.copy(),
        gamma1=gamma,
        lambda1=np.asarray(lam).copy(),
        theta1=theta,
        design=W,
        factors=F,
        control_idios=Uc,
        control_ids=tuple(panel.unit_ids[c] for c in controls),
        counterfactual_path=z[t0:] - effects,
        effects=effects,
        avg_effect=math.fsum(effects) / effects.size,
        pre_residuals=pre,
        diagnostics=diagnostics,
        factor_fit=ffit,
    )
    return out


def fit_all(panel: Panel, spec: MethodSpec) -> dict:
    """Fit every treated unit separately; all treated units are kept out of the control pool."""
    panel.validate_for_estimation()
    if spec.method == "before_after":
        return {panel.unit_ids[i]: _before_after(panel, spec, i) for i in panel.treated_units}
    detrended = _stage("detrend", "*", detrend_panel, panel, spec.design, sample=spec.sample)
    return {panel.unit_ids[i]: _fit_one(panel, spec, i, detrended) for i in panel.treated_units}


def fit(panel: Panel, spec: MethodSpec, unit=None) -> CounterfactualFit:
    """Fit the counterfactual for one treated unit (the only one unless ``unit`` is given)."""
    panel.validate_for_estimation()
    if unit is None:
        if len(panel.treated_units) != 1:
            raise ValidationError("panel has several treated units; pass unit= or use fit_all")
        i = panel.treated_units[0]
    else:
        i = unit if isinstance(unit, (int, np.integer)) else panel.unit_index(unit)
        if i not in panel.treated_units:
            raise ValidationError(f"unit {panel.unit_ids[i]!r} is not treated")
    if spec.method == "before_after":
        return _before_after(panel, spec, i)
    detrended = _stage("detrend", panel.unit_ids[i], detrend_panel, panel, spec.design, sample=spec.sample)
    return _fit_one(panel, spec, i, detrended)
