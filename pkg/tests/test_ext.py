import json
import os
import subprocess
import sys

import numpy as np
import pytest

from farmtreat import _ext
from farmtreat._ext import _kernels_py
from farmtreat.counterfactual import fit
from farmtreat.simulation import DgpParams, generate, method_spec

SCRIPT = """
import json
from farmtreat import _ext
from farmtreat.counterfactual import fit
from farmtreat.simulation import DgpParams, generate, method_spec
f = fit(generate(DgpParams(T0=60, n=30, seed=5)), method_spec("farmtreat", "pre_only"))
print(json.dumps({"compiled": _ext.COMPILED, "effect": float(f.effects[0]), "theta": f.theta1.tolist()}))
"""


def run_fallback():
    env = dict(os.environ, FARMTREAT_PURE_PYTHON="1")
    res = subprocess.run([sys.executable, "-c", SCRIPT], capture_output=True, text=True, env=env, check=True)
    return json.loads(res.stdout)


def test_fallback_selected_and_consistent():
    out = run_fallback()
    assert out["compiled"] is False
    f = fit(generate(DgpParams(T0=60, n=30, seed=5)), method_spec("farmtreat", "pre_only"))
    assert out["effect"] == pytest.approx(float(f.effects[0]), abs=1e-8)
    np.testing.assert_allclose(out["theta"], f.theta1, atol=1e-8)


def test_best_swap_agrees():
    if not _ext.COMPILED:
        pytest.skip("extension not built")
    from farmtreat._ext import _kernels

    rng = np.random.default_rng(0)
    Z = np.ascontiguousarray(rng.normal(size=(30, 4)))
    members = np.arange(0, 30, 2).astype(np.int_)
    others = np.arange(1, 30, 2).astype(np.int_)
    s1, s0 = Z[members].sum(axis=0), Z[others].sum(axis=0)
    cur = float(np.abs(s1 / 15 - s0 / 15).mean())
    a = _kernels.best_swap(Z, members, others, s1, s0, cur)
    b = _kernels_py.best_swap(Z, members, others, s1, s0, cur)
    assert a[1:] == b[1:]
    assert a[0] == pytest.approx(b[0], rel=1e-12)
