import itertools
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from farmtreat.errors import ValidationError
from farmtreat.inference import block_pvalue, block_statistics, resample_test, statistic


def fake_fit(resid, effects, scale=1.0):
    return SimpleNamespace(pre_residuals=np.asarray(resid, float), effects=np.asarray(effects, float),
                           outcome_scale=scale)


def test_statistics():
    assert statistic([1, -2, 3], "sum_sq") == 14.0
    assert statistic([1, -2, 3], "sum_abs") == 6.0
    with pytest.raises(ValueError):
        statistic([1], "max")


def test_four_block_example():
    p, obs, stats = block_pvalue([1, -2, 3, -4], [5], "sum_abs")
    assert sorted(stats) == [1, 2, 3, 4]
    assert obs == 5
    assert p == pytest.approx(0.2)
    rep = resample_test(fake_fit([1, -2, 3, -4], [5]), "sum_abs", min_blocks=4, warn_blocks=0)
    assert rep.p_value == pytest.approx(0.2)
    assert rep.n_blocks == 4


def test_zero_effect_gives_one():
    p, _, _ = block_pvalue([1, -2, 3, -4], [0], "sum_sq")
    assert p == 1.0


def enumerate_blocks(resid, effects, kind):
    # independent oracle: explicit loops over every start position
    L = len(effects)
    obs = sum(e * e if kind == "sum_sq" else abs(e) for e in effects)
    count = total = 0
    for s in range(len(resid) - L + 1):
        phi = sum(r * r if kind == "sum_sq" else abs(r) for r in resid[s:s + L])
        count += phi >= obs
        total += 1
    return (1 + count) / (1 + total)


@settings(max_examples=60, deadline=None)
@given(
    resid=st.lists(st.integers(-5, 5), min_size=6, max_size=30),
    effects=st.lists(st.integers(-5, 5), min_size=1, max_size=4),
    kind=st.sampled_from(["sum_sq", "sum_abs"]),
)
def test_matches_enumeration(resid, effects, kind):
    # integer data: sums are exact, so ties are compared exactly
    p, _, stats = block_pvalue(resid, effects, kind)
    assert p == enumerate_blocks(resid, effects, kind)
    assert stats.size == len(resid) - len(effects) + 1
    assert 1.0 / (1 + stats.size) <= p <= 1.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(0, 5), b=st.floats(0, 5))
def test_monotone_in_effect_size(seed, a, b):
    resid = np.random.default_rng(seed).normal(size=40)
    lo, hi = sorted((a, b))
    assert block_pvalue(resid, [hi, -hi], "sum_sq")[0] <= block_pvalue(resid, [lo, -lo], "sum_sq")[0]


def test_block_order_irrelevant():
    resid = np.random.default_rng(0).normal(size=50)
    _, obs, stats = block_pvalue(resid, [1.5], "sum_abs")
    perm = np.random.default_rng(1).permutation(stats)
    assert (1 + np.count_nonzero(perm >= obs)) / (1 + perm.size) == block_pvalue(resid, [1.5], "sum_abs")[0]


def test_overlapping_blocks():
    np.testing.assert_array_equal(block_statistics([1, 2, 3, 4], 2, "sum_abs"), [3, 5, 7])


def test_too_few_blocks():
    with pytest.raises(ValidationError):
        resample_test(fake_fit(np.ones(10), np.ones(7)))
    with pytest.warns(UserWarning):
        resample_test(fake_fit(np.ones(10), np.ones(3)))


def test_per_period_pvalues():
    resid = np.arange(1, 23, dtype=float)
    rep = resample_test(fake_fit(resid, [0.5, 10.5, 30.0]), "sum_abs")
    np.testing.assert_allclose(rep.per_period_p, [23 / 23, 13 / 23, 1 / 23])
    d = rep.to_dict(t0=22)
    assert [e["t"] for e in d["per_period"]] == [23, 24, 25]
    assert d["n_blocks"] == 20


def test_roundoff_floor():
    rep = resample_test(fake_fit(np.full(30, 1e-13), [1e-14], scale=10.0))
    assert rep.p_value == 1.0
