import numpy as np
import pandas as pd
import pytest

from farmtreat.detrend import DesignSpec, build_design, detrend_panel, ols_fit
from farmtreat.errors import RankDeficientError, StageError, ValidationError
from farmtreat.panel import Panel
from farmtreat.simulation import DgpParams, generate, simulation_design


def test_intercept_only():
    X = build_design(DesignSpec(), np.arange(1, 5), np.arange(4))
    np.testing.assert_array_equal(X, np.ones((4, 1)))


def test_centred_trend():
    X = build_design(DesignSpec(linear_trend=True), np.arange(1, 6), np.arange(5))
    np.testing.assert_allclose(X[:, 1], [-0.4, -0.2, 0.0, 0.2, 0.4], atol=1e-15)


def test_trend_extends_past_window():
    # scaled on the window, evaluated beyond it
    X = build_design(DesignSpec(linear_trend=True), np.arange(1, 8), np.arange(5), rows=np.arange(7))
    np.testing.assert_allclose(X[5:, 1], [0.6, 0.8])


def test_weekday_dummies():
    days = pd.date_range("2024-01-01", periods=7).to_numpy()  # a Monday
    X = build_design(DesignSpec(intercept=False, weekday_dummies=True), days, np.arange(7))
    assert X.shape == (7, 6)
    np.testing.assert_array_equal(X[:6], np.eye(6))
    np.testing.assert_array_equal(X[6], np.zeros(6))


def test_weekday_needs_dates():
    with pytest.raises(ValidationError):
        build_design(DesignSpec(weekday_dummies=True), np.arange(1, 8), np.arange(7))


def test_exact_linear_fit():
    t = np.arange(1, 21, dtype=float)
    X = build_design(DesignSpec(linear_trend=True), t, np.arange(20))
    coef, resid, r2 = ols_fit(X, 2 + 3 * t)
    assert np.max(np.abs(resid)) <= 1e-10
    assert r2 == pytest.approx(1.0)


def test_constant_response():
    coef, resid, r2 = ols_fit(np.ones((6, 1)), np.full(6, 4.5))
    np.testing.assert_allclose(coef, [4.5])
    assert np.max(np.abs(resid)) <= 1e-12
    assert r2 == 0.0


def test_normal_equations_oracle():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(20, 3))
    y = rng.normal(size=20)
    coef, _, _ = ols_fit(X, y)
    np.testing.assert_allclose(coef, np.linalg.solve(X.T @ X, X.T @ y), atol=1e-8)


def test_rank_deficiency_names_column():
    X = np.column_stack([np.ones(5), np.arange(5.0), 2 * np.ones(5)])
    with pytest.raises(RankDeficientError) as info:
        ols_fit(X, np.arange(5.0), names=["intercept", "trend", "dup"])
    assert info.value.column == "dup"


def test_constant_units_give_zero_residuals():
    p = Panel(outcomes=np.array([[1.0] * 6, [2.0] * 6, [-3.0] * 6]), unit_ids=list("abc"),
              time_index=np.arange(1, 7), treated_units=(0,), t0=3)
    res = detrend_panel(p, DesignSpec())
    np.testing.assert_allclose(res.residuals, 0.0, atol=1e-14)


def test_level_shift_after_t0():
    y = np.zeros((3, 10))
    y[0, 6:] = 5.0
    p = Panel(outcomes=y + 1.0, unit_ids=list("abc"), time_index=np.arange(1, 11), treated_units=(0,), t0=6)
    res = detrend_panel(p, DesignSpec())
    np.testing.assert_allclose(res.residuals[0, :6], 0.0, atol=1e-12)
    np.testing.assert_allclose(res.residuals[0, 6:], 5.0)
    assert res.fit_windows[0] == (1, 6) and res.fit_windows[1] == (1, 10)


def test_treated_ignores_post_data():
    p = generate(DgpParams(T0=40, n=8, T2=5, seed=2))
    spec = simulation_design()
    a = detrend_panel(p, spec)
    y = p.outcomes.copy()
    y[0, 40:] += 100.0
    b = detrend_panel(Panel(y, p.unit_ids, p.time_index, p.covariates, (0,), 40), spec)
    np.testing.assert_array_equal(a.gammas[0], b.gammas[0])


def test_residuals_orthogonal_to_design():
    p = generate(DgpParams(T0=60, n=6, T2=4, seed=5))
    spec = simulation_design()
    res = detrend_panel(p, spec)
    cov = {c: p.covariates[c][0] for c in spec.extra_covariates}
    X = build_design(spec, p.time_index, np.arange(60), cov)
    scale = np.abs(p.outcomes[0]).max()
    assert np.max(np.abs(X.T @ res.residuals[0, :60])) <= 1e-8 * scale * 60


def test_rank_deficient_design_raises_stage_error():
    p = generate(DgpParams(T0=30, n=4, seed=1))
    spec = DesignSpec(extra_covariates=("x1", "x1"))
    with pytest.raises(StageError) as info:
        detrend_panel(p, spec)
    assert info.value.stage == "detrend"
    assert isinstance(info.value.cause, RankDeficientError)


def test_coefficient_recovery():
    # slope and covariate effects are unbiased across seeds
    T0, reps = 500, 40
    errs = []
    for s in range(reps):
        p, truth = generate(DgpParams(T0=T0, n=3, seed=100 + s), return_truth=True)
        res = detrend_panel(p, simulation_design(), sample="full_sample")
        g = res.gammas[1]
        T = p.n_periods
        errs.append([g[1] / T - truth.gammas[1, 1], g[2] - truth.gammas[1, 2], g[3] - truth.gammas[1, 3]])
    errs = np.array(errs)
    mean, sd = errs.mean(axis=0), errs.std(axis=0, ddof=1)
    assert np.all(np.abs(mean) <= 3 * sd / np.sqrt(reps))
