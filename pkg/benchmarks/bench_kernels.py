"""Time the compiled kernels against their pure-Python fallbacks.

Run with ``python3 benchmarks/bench_kernels.py``.  Prints one line per
kernel and problem size with the best-of-N wall time of each
implementation and the speedup; also checks that both give the same answer.
"""

import argparse
import timeit

import numpy as np

from farmtreat._ext import COMPILED, _kernels_py

if COMPILED:
    from farmtreat._ext import _kernels


def lasso_case(T0, p, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(T0, p))
    X /= np.linalg.norm(X, axis=0)
    y = X[:, :3].sum(axis=1) + rng.normal(size=T0)
    G = np.ascontiguousarray(X.T @ X)
    c = np.ascontiguousarray(X.T @ y)
    w = np.full(p, 0.05 * np.abs(c).max())
    return G, c, w, float(y @ y)


def run_lasso(mod, case, sweeps):
    G, c, w, yy = case
    beta = np.zeros(G.shape[0])
    return mod.lasso_cd_gram(G, c, w, beta, yy, 0.0, sweeps), beta


def swap_case(n, J, seed=0):
    rng = np.random.default_rng(seed)
    Z = np.ascontiguousarray(rng.normal(size=(n, J)))
    perm = rng.permutation(n)
    K = n // 2
    members = np.sort(perm[:K]).astype(np.int_)
    others = np.sort(perm[K:]).astype(np.int_)
    s1, s0 = Z[members].sum(axis=0), Z[others].sum(axis=0)
    cur = float(np.abs(s1 / K - s0 / (n - K)).mean())
    return Z, members, others, s1, s0, cur


def bench(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not COMPILED:
        print("extension not built; nothing to compare")
        return
    print(f"{'kernel':<28}{'compiled (s)':>14}{'python (s)':>14}{'speedup':>10}")
    for T0, p in ((100, 99), (250, 249), (1000, 999)):
        case = lasso_case(T0, p)
        sweeps = 20
        (_, b1), (_, b2) = run_lasso(_kernels, case, sweeps), run_lasso(_kernels_py, case, sweeps)
        assert np.allclose(b1, b2, rtol=1e-10, atol=1e-12)
        tc = bench(lambda: run_lasso(_kernels, case, sweeps), args.repeat)
        tp = bench(lambda: run_lasso(_kernels_py, case, sweeps), max(1, args.repeat // 2))
        print(f"{f'lasso_cd_gram p={p} x{sweeps}':<28}{tc:>14.5f}{tp:>14.5f}{tp / tc:>10.1f}")
    for n, J in ((40, 3), (200, 5), (1000, 10)):
        case = swap_case(n, J)
        r1 = _kernels.best_swap(*case)
        r2 = _kernels_py.best_swap(*case)
        assert r1[1:] == r2[1:] and np.isclose(r1[0], r2[0])
        tc = bench(lambda: _kernels.best_swap(*case), args.repeat)
        tp = bench(lambda: _kernels_py.best_swap(*case), args.repeat)
        print(f"{f'best_swap n={n} J={J}':<28}{tc:>14.5f}{tp:>14.5f}{tp / tc:>10.1f}")


if __name__ == "__main__":
    main()
