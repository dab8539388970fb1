import numpy as np
import pytest
from scipy.stats import norm

from farmtreat.counterfactual import fit
from farmtreat.errors import NumericalError, ValidationError
from farmtreat.idio_test import (
    default_bandwidth,
    gaussian_max_draws,
    idio_contribution_test,
    long_run_cov,
)
from farmtreat.simulation import DgpParams, generate, method_spec


def test_bandwidth_rule():
    assert default_bandwidth(100) == 5.0
    assert default_bandwidth(1000) == 7.0


def test_unit_bandwidth_is_m0():
    D = np.random.default_rng(0).normal(size=(50, 3))
    lrv = long_run_cov(D, h=1)
    np.testing.assert_array_equal(lrv.matrix, D.T @ D / 50)
    assert lrv.lags_used == 0


def test_hand_expansion():
    # M0 = 1, M1 = 3/4, M2 = 1/2; weights 2/3 and 1/3
    lrv = long_run_cov(np.ones((4, 1)), h=3)
    assert lrv.matrix[0, 0] == 7 / 3
    assert lrv.lags_used == 2


def test_not_demeaned():
    lrv = long_run_cov(np.full((10, 1), 2.0), h=1)
    assert lrv.matrix[0, 0] == 4.0


def test_iid_limit():
    for s in range(50):
        D = np.random.default_rng(s).normal(size=(2000, 5))
        ups = long_run_cov(D, h=5).matrix
        assert np.linalg.norm(ups - np.eye(5)) <= 0.2 * np.linalg.norm(np.eye(5))


def test_bad_arguments():
    with pytest.raises(ValidationError):
        long_run_cov(np.ones((5, 2)), kernel="parzen")
    with pytest.raises(ValidationError):
        long_run_cov(np.ones((5, 2)), h=0.5)
    with pytest.raises(NumericalError):
        gaussian_max_draws(-np.eye(2), 10, 0)


def test_max_gaussian_quantiles():
    p = 10
    draws = gaussian_max_draws(np.eye(p), 10_000, seed=1)
    for a in (0.9, 0.95, 0.99):
        exact = norm.ppf((1 + a ** (1 / p)) / 2)
        assert np.quantile(draws, a) == pytest.approx(exact, rel=0.05)


def test_draws_independent_of_workers():
    cov = np.array([[1.0, 0.3], [0.3, 2.0]])
    a = gaussian_max_draws(cov, 3500, seed=9, n_jobs=1)
    b = gaussian_max_draws(cov, 3500, seed=9, n_jobs=4)
    np.testing.assert_array_equal(a, b)


def test_zero_treated_series():
    U = np.random.default_rng(2).normal(size=(6, 80))
    rep = idio_contribution_test(u1=np.zeros(80), U=U, n_draws=500)
    assert rep.statistic == 0.0
    assert rep.p_value == 1.0


def test_statistic_definition():
    rng = np.random.default_rng(3)
    u1, U = rng.normal(size=64), rng.normal(size=(4, 64))
    rep = idio_contribution_test(u1=u1, U=U, n_draws=500)
    assert rep.statistic == pytest.approx(np.max(np.abs(U @ u1)) / 8.0)
    assert set(rep.to_dict()) >= {"S", "p_value", "quantiles", "kernel", "h", "n_draws", "seed"}


def test_draw_minimum():
    with pytest.raises(ValidationError):
        idio_contribution_test(u1=np.ones(5), U=np.ones((2, 5)), n_draws=100)


def _rejection(beta, T0, reps, seed0):
    hits = 0
    for r in range(reps):
        p = generate(DgpParams(T0=T0, n=100, beta=beta, seed=seed0 + r))
        ff = fit(p, method_spec("pcr", "pre_only")).factor_fit
        hits += idio_contribution_test(ff, n_draws=1000, seed=r).p_value <= 0.05
    return hits / reps


@pytest.mark.slow
def test_size_without_links():
    assert 0.01 <= _rejection("zero", 250, 200, 50_000) <= 0.10


@pytest.mark.slow
def test_power_with_links():
    assert _rejection("sparse", 500, 100, 60_000) >= 0.8
