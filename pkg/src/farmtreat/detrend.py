"""First-stage regressions: remove deterministic and observed-covariate structure unit by unit."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
import scipy.linalg

from .errors import NumericalError, RankDeficientError, StageError, ValidationError
from .panel import Panel

__all__ = ["DesignSpec", "DetrendResult", "build_design", "detrend_panel", "ols_fit"]

WEEKDAYS = ("mon", "tue", "wed", "thu", "fri", "sat")


@dataclass(frozen=True)
class DesignSpec:
    """Declarative first-stage design.

    Columns are always emitted in the order intercept, trend, weekday dummies
    (Monday..Saturday, Sunday omitted), custom dummies, extra covariates.
    ``custom_dummies`` maps a name to a 0/1 series over the full time index;
    ``extra_covariates`` names per-unit series stored on the panel.
    """

    intercept: bool = True
    linear_trend: bool = False
    weekday_dummies: bool = False
    custom_dummies: Mapping[str, Sequence[float]] = field(default_factory=dict)
    extra_covariates: tuple = ()

    def column_names(self) -> list[str]:
        names = []
        if self.intercept:
            names.append("intercept")
        if self.linear_trend:
            names.append("trend")
        if self.weekday_dummies:
            names.extend(WEEKDAYS)
        names.extend(self.custom_dummies)
        names.extend(self.extra_covariates)
        return names


@dataclass(frozen=True)
class DetrendResult:
    residuals: np.ndarray  # (n, T)
    gammas: np.ndarray  # (n, k)
    fit_windows: tuple  # per unit (first, last), 1-based inclusive
    r_squared: np.ndarray
    column_names: tuple
    spec: DesignSpec


def build_design(spec: DesignSpec, time_index, window, covariates=None, rows=None):
    """Design matrix for ``rows`` with the trend centred and scaled on ``window``.

    ``window`` and ``rows`` are 0-based positions into ``time_index``;
    ``rows`` defaults to ``window``.  ``covariates`` maps extra-covariate
    names to this unit's full-length series.
    """
    time_index = np.asarray(time_index)
    window = np.asarray(window, dtype=int)
    if window.size == 0:
        raise ValidationError("empty fitting window")
    rows = window if rows is None else np.asarray(rows, dtype=int)
    cols = []
    if spec.intercept:
        cols.append(np.ones(rows.size))
    if spec.linear_trend:
        t = window + 1.0
        cols.append((rows + 1.0 - t.mean()) / window.size)
    if spec.weekday_dummies:
        if not np.issubdtype(time_index.dtype, np.datetime64):
            raise ValidationError("weekday dummies need a date-valued time index")
        dow = pd.DatetimeIndex(time_index[rows]).dayofweek.to_numpy()
        for d in range(6):
            cols.append((dow == d).astype(float))
    for name, values in spec.custom_dummies.items():
        v = np.asarray(values, dtype=float)
        if v.shape != time_index.shape:
            raise ValidationError(f"dummy {name!r} must have length {time_index.size}")
        if not np.all((v == 0) | (v == 1)):
            raise ValidationError(f"dummy {name!r} is not 0/1")
        cols.append(v[rows])
    for name in spec.extra_covariates:
        if covariates is None or name not in covariates:
            raise ValidationError(f"covariate {name!r} not available")
        cols.append(np.asarray(covariates[name], dtype=float)[rows])
    if not cols:
        return np.empty((rows.size, 0))
    return np.column_stack(cols)


def _first_dependent_column(X, names):
    for j in range(1, X.shape[1] + 1):
        if np.linalg.matrix_rank(X[:, :j]) < j:
            return names[j - 1] if names else j - 1
    return None


def ols_fit(X, y, names=None):
    """Least squares through a column-pivoted QR decomposition.

    ``y`` may be a vector or a (rows x m) matrix of responses sharing ``X``.
    Returns ``(coef, residuals, r2)`` with ``r2 = 1 - RSS/TSS`` (TSS about the
    mean) and ``r2 = 0`` when TSS is zero.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("non-finite input to ols_fit")
    n, k = X.shape
    if n < k:
        raise RankDeficientError(f"{n} rows for {k} columns")
    if k == 0:
        coef = np.zeros((0,) + y.shape[1:])
        resid = y.copy()
    else:
        Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        tol = max(n, k) * np.finfo(float).eps * d[0]
        if d[0] == 0 or d[-1] <= tol:
            col = _first_dependent_column(X, names)
            raise RankDeficientError(f"design is rank deficient at column {col!r}", column=col)
        sol = scipy.linalg.solve_triangular(R, Q.T @ y)
        coef = np.empty_like(sol)
        coef[piv] = sol
        resid = y - X @ coef
    rss = np.sum(resid**2, axis=0)
    tss = np.sum((y - y.mean(axis=0)) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(tss > 0, 1.0 - rss / np.where(tss > 0, tss, 1.0), 0.0)
    r2 = np.clip(r2, 0.0, 1.0)
    if np.ndim(r2) == 0:
        r2 = float(r2)
    return coef, resid, r2


def detrend_panel(panel: Panel, spec: DesignSpec, sample: str = "pre_only") -> DetrendResult:
    """Per-unit OLS of outcomes on the design; residuals over the whole sample.

    Treated units are fitted on periods ``1..t0`` (``sample='pre_only'``) or
    on the full sample (``'full_sample'``); every other unit on ``1..T``.
    Residuals for all periods use the fitted coefficients.
    """
    if panel.t0 is None and panel.treated_units:
        raise ValidationError("panel has treated units but no t0")
    if sample not in ("pre_only", "full_sample"):
        raise ValidationError(f"unknown sample {sample!r}")
    n, T = panel.outcomes.shape
    names = spec.column_names()
    k = len(names)
    all_rows = np.arange(T)
    treated = set(panel.treated_units) if sample == "pre_only" else set()
    windows = [(1, panel.t0) if i in treated else (1, T) for i in range(n)]

    resid = np.empty((n, T))
    gammas = np.empty((n, k))
    r2 = np.empty(n)

    shared = {}
    for c in spec.extra_covariates:
        if c not in panel.covariates:
            raise ValidationError(f"covariate {c!r} not in panel")
        a = panel.covariates[c]
        if np.all(a == a[0]):
            shared[c] = a[0]
    per_unit = len(shared) < len(spec.extra_covariates)

    def fit_group(units, last):
        window = np.arange(last)
        if per_unit:
            for i in units:
                cov = {c: panel.covariates[c][i] for c in spec.extra_covariates if c in panel.covariates}
                try:
                    X = build_design(spec, panel.time_index, window, cov)
                    coef, _, r2[i] = ols_fit(X, panel.outcomes[i, :last], names)
                except (NumericalError, ValidationError) as exc:
                    raise StageError("detrend", panel.unit_ids[i], exc) from exc
                gammas[i] = coef
                resid[i] = panel.outcomes[i] - build_design(spec, panel.time_index, window, cov, all_rows) @ coef
            return
        units = list(units)
        try:
            X = build_design(spec, panel.time_index, window, shared)
            coef, _, rr = ols_fit(X, panel.outcomes[units, :last].T, names)
        except (NumericalError, ValidationError) as exc:
            raise StageError("detrend", panel.unit_ids[units[0]], exc) from exc
        gammas[units] = coef.T
        r2[units] = rr
        Xall = build_design(spec, panel.time_index, window, shared, rows=all_rows)
        resid[units] = panel.outcomes[units] - (Xall @ coef).T

    groups = {}
    for i, (_, last) in enumerate(windows):
        groups.setdefault(last, []).append(i)
    for last, units in sorted(groups.items()):
        fit_group(units, last)

    for a in (resid, gammas, r2):
        a.setflags(write=False)
    return DetrendResult(resid, gammas, tuple(windows), r2, tuple(names), spec)
