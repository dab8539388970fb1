"""Split units into two groups with balanced covariate means.

The objective for a 0/1 membership vector ``alpha`` with ``sum(alpha) = K``
is ``(1/J) sum_j |mean_j(group 1) - mean_j(group 0)|``.  Small problems are
enumerated exhaustively; larger ones use a multi-start swap local search.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from . import _ext
from .errors import ValidationError

__all__ = ["Assignment", "BalanceProblem", "balance_objective", "solve_balance"]

EXHAUSTIVE_MAX_N = 16


@dataclass(frozen=True)
class BalanceProblem:
    Z: np.ndarray  # (n, J)
    K: int
    standardize: bool = True

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if Z.ndim != 2 or Z.shape[0] < 2 or Z.shape[1] < 1:
            raise ValidationError("Z must be an n x J matrix with n >= 2")
        if not np.all(np.isfinite(Z)):
            raise ValidationError("non-finite covariates")
        if not 1 <= self.K <= Z.shape[0] - 1:
            raise ValidationError(f"infeasible group size K={self.K} for n={Z.shape[0]}")
        object.__setattr__(self, "Z", Z)

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    def scaled(self) -> np.ndarray:
        """Covariates as used by the objective (z-scored when ``standardize``)."""
        if not self.standardize:
            return self.Z
        sd = self.Z.std(axis=0)
        const = np.flatnonzero(sd == 0)
        if const.size:
            raise ValidationError(f"covariate column {int(const[0])} is constant")
        return (self.Z - self.Z.mean(axis=0)) / sd


@dataclass(frozen=True)
class Assignment:
    alpha: np.ndarray  # 1 = group of size K
    objective: float
    method: str
    treated: np.ndarray  # alpha or its complement, chosen by the final coin
    restarts: int = 0


def balance_objective(Z, alpha) -> float:
    """Mean absolute difference of group means over the columns of ``Z``."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    a = np.asarray(alpha).astype(bool)
    if a.shape != (Z.shape[0],):
        raise ValidationError("alpha must have one entry per row of Z")
    if a.all() or not a.any():
        raise ValidationError("both groups must be nonempty")
    diff = Z[a].mean(axis=0) - Z[~a].mean(axis=0)
    return math.fsum(np.abs(diff)) / Z.shape[1]


def _exhaustive(Z, K):
    n = Z.shape[0]
    best, best_set = np.inf, None
    idx = np.array(list(itertools.combinations(range(n), K)), dtype=np.intp)
    total = Z.sum(axis=0)
    for start in range(0, len(idx), 4096):
        blk = idx[start:start + 4096]
        s1 = Z[blk].sum(axis=1)
        obj = np.abs(s1 / K - (total - s1) / (n - K)).mean(axis=1)
        k = int(np.argmin(obj))
        if obj[k] < best:
            best, best_set = obj[k], blk[k]
    alpha = np.zeros(n, dtype=int)
    alpha[best_set] = 1
    return alpha


def _local_search(Z, K, rng, max_iter=10_000):
    n = Z.shape[0]
    Zc = np.ascontiguousarray(Z)
    perm = rng.permutation(n)
    members, others = np.sort(perm[:K]).astype(np.int_), np.sort(perm[K:]).astype(np.int_)
    sum1 = Zc[members].sum(axis=0)
    sum0 = Zc[others].sum(axis=0)
    cur = float(np.abs(sum1 / K - sum0 / (n - K)).mean())
    for _ in range(max_iter):
        obj, a, b = _ext.best_swap(Zc, members, others, sum1, sum0, cur)
        if a < 0:
            break
        i_out, i_in = members[a], others[b]
        sum1 = sum1 + Zc[i_in] - Zc[i_out]
        sum0 = sum0 - Zc[i_in] + Zc[i_out]
        members[a], others[b] = i_in, i_out
        cur = obj
    alpha = np.zeros(n, dtype=int)
    alpha[members] = 1
    return alpha


def solve_balance(problem: BalanceProblem, restarts: int = 20, seed: int = 0,
                  time_budget: float | None = None, exhaustive_max_n: int = EXHAUSTIVE_MAX_N) -> Assignment:
    """Best balanced split of ``problem``.

    ``n <= exhaustive_max_n`` enumerates every subset.  Otherwise each restart
    starts from a random K-subset and takes the best strictly improving
    one-in/one-out swap until none remains; the best restart wins, ties to
    the lowest restart index.  ``time_budget`` (seconds) stops launching
    restarts once exceeded; the first restart always runs.  A final coin
    from the seed decides which group is treated.
    """
    Z = problem.scaled()
    n, K = problem.n, problem.K
    ss = np.random.SeedSequence(seed)
    coin_ss, *restart_ss = ss.spawn(1 + max(1, restarts))
    if n <= exhaustive_max_n:
        alpha, method, used = _exhaustive(Z, K), "exhaustive", 0
    else:
        method = "local_search"
        t_start = time.monotonic()
        best, alpha, used = np.inf, None, 0
        for r_ss in restart_ss:
            if used and time_budget is not None and time.monotonic() - t_start > time_budget:
                break
            cand = _local_search(Z, K, np.random.default_rng(r_ss))
            obj = balance_objective(Z, cand)
            used += 1
            if obj < best:
                best, alpha = obj, cand
    heads = bool(np.random.default_rng(coin_ss).integers(2))
    treated = alpha.copy() if heads else 1 - alpha
    return Assignment(alpha, balance_objective(Z, alpha), method, treated, used)
