"""LASSO by cyclic coordinate descent, with a BIC-selected penalty path.

The objective is the unnormalised one,

    ||y - X theta||^2 + xi * ||theta||_1,

with no 1/T scaling and no intercept.  Internally the columns are scaled to
unit Euclidean norm (b_j = ||x_j|| theta_j); the penalty is carried over
exactly as per-coordinate thresholds xi / (2 ||x_j||), so ``xi`` keeps its
meaning on the original scale and ``theta`` is reported on that scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _ext
from .errors import ConvergenceError, ValidationError

__all__ = ["LassoFit", "LassoProblem", "lasso_fit", "penalty_max", "select_penalty_bic"]


@dataclass(frozen=True)
class LassoFit:
    theta: np.ndarray
    penalty: float
    active_set: np.ndarray
    objective: float
    rss: float
    standardization: np.ndarray  # column norms
    n_sweeps: int
    history: np.ndarray  # objective after each sweep


class LassoProblem:
    """Precomputed Gram form of one (X, y) pair, reusable along a penalty path."""

    def __init__(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValidationError(f"shape mismatch: X {X.shape}, y {y.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValidationError("NaN or infinite input to lasso")
        self.X, self.y = X, y
        self.scale = np.sqrt(np.einsum("ij,ij->j", X, X))
        safe = np.where(self.scale > 0, self.scale, 1.0)
        Xs = X / safe
        Xs[:, self.scale == 0] = 0.0
        self.gram = np.ascontiguousarray(Xs.T @ Xs)
        self.corr = np.ascontiguousarray(Xs.T @ y)
        self.yy = float(y @ y)

    @property
    def xi_max(self) -> float:
        """Smallest penalty at which theta = 0 solves the problem: 2 ||X'y||_inf."""
        if self.corr.size == 0:
            return 0.0
        return float(2.0 * np.max(np.abs(self.corr * self.scale)))

    def solve(self, penalty, theta0=None, tol=1e-8, max_sweeps=10_000) -> LassoFit:
        if not penalty >= 0:
            raise ValidationError(f"penalty must be >= 0, got {penalty}")
        p = self.scale.size
        live = self.scale > 0
        if penalty >= self.xi_max:
            theta = np.zeros(p)
            return LassoFit(theta, float(penalty), np.zeros(0, dtype=int), self.yy, self.yy,
                            self.scale, 0, np.zeros(0))
        with np.errstate(divide="ignore"):
            w = np.where(live, penalty / (2.0 * np.where(live, self.scale, 1.0)), np.inf)
        beta = np.zeros(p) if theta0 is None else np.asarray(theta0, dtype=float) * self.scale
        beta = np.ascontiguousarray(np.where(live, beta, 0.0))
        w = np.ascontiguousarray(w)
        # Convergence is judged on the scaled coefficients, relative to ||y||.
        tol_abs = tol * max(np.sqrt(self.yy), np.finfo(float).tiny)
        sweeps, chunk, hists = 0, 50, []
        while True:
            n, delta, h = _ext.lasso_cd_gram(
                self.gram, self.corr, w, beta, self.yy, tol_abs, int(min(chunk, max_sweeps - sweeps))
            )
            sweeps += n
            hists.append(h)
            if delta < tol_abs or sweeps >= max_sweeps:
                break
            polished = self._polish(beta, w)
            if polished is not None:
                beta[:] = polished
                # one confirming sweep from the exact candidate
                n, delta, h = _ext.lasso_cd_gram(self.gram, self.corr, w, beta, self.yy, tol_abs, 1)
                sweeps += n
                hists.append(h)
                if delta < tol_abs:
                    break
            chunk = min(2 * chunk, 1000)
        hist = np.concatenate(hists)
        if delta >= tol_abs:
            raise ConvergenceError(
                f"coordinate descent did not converge in {max_sweeps} sweeps (last delta {delta:.3g})",
                last_delta=float(delta),
            )
        theta = np.where(live, beta / np.where(live, self.scale, 1.0), 0.0)
        resid = self.y - self.X @ theta
        rss = float(resid @ resid)
        obj = rss + penalty * float(np.abs(theta).sum())
        return LassoFit(
            theta=theta,
            penalty=float(penalty),
            active_set=np.flatnonzero(theta != 0),
            objective=obj,
            rss=rss,
            standardization=self.scale,
            n_sweeps=int(sweeps),
            history=np.asarray(hist),
        )


    def _polish(self, beta, w):
        """Exact minimiser near the current iterate, if one can be certified.

        Coordinate descent crawls along ill-conditioned directions when the
        support approaches the sample size.  Starting from the current
        support and signs this runs a small active-set method: along a null
        direction of the support Gram matrix the fit is unchanged, so move
        the way that lowers the l1 term until a coordinate hits zero;
        otherwise solve the stationarity system, stopping at the first sign
        change.  Each step stays in one orthant and never raises the
        objective.  The result is kept only when every KKT condition holds.
        """
        p = beta.size
        cur = beta.copy()
        sgn_all = np.sign(cur)
        slack = 1e-9 * (np.abs(self.corr).max() + 1.0)
        for _ in range(4 * p + 4):
            act = np.flatnonzero(sgn_all)
            if act.size == 0:
                return None
            a = cur[act]
            sgn = sgn_all[act]
            ev, vec = np.linalg.eigh(self.gram[np.ix_(act, act)])
            if ev[0] <= 1e-10 * max(ev[-1], 1.0):
                d = vec[:, 0]
                if (w[act] * sgn) @ d > 0:
                    d = -d
                with np.errstate(divide="ignore", invalid="ignore"):
                    steps = np.where(d * sgn < 0, -a / d, np.inf)
                k = int(np.argmin(steps))
                if not np.isfinite(steps[k]):
                    return None
                new = a + steps[k] * d
            else:
                b = vec @ ((vec.T @ (self.corr[act] - w[act] * sgn)) / ev)
                flip = np.sign(b) != sgn
                if not np.any(flip):
                    cur[act] = b
                    q = self.corr - self.gram[:, act] @ b
                    viol = np.abs(q) - w
                    viol[act] = -np.inf
                    j = int(np.argmax(viol))
                    if viol[j] <= slack:
                        cand = np.zeros_like(cur)
                        cand[act] = b
                        return cand
                    sgn_all[j] = np.sign(q[j])
                    cur[j] = 0.0
                    continue
                with np.errstate(divide="ignore", invalid="ignore"):
                    steps = np.where(flip, a / (a - b), np.inf)
                k = int(np.argmin(steps))
                new = a + steps[k] * (b - a)
            new[k] = 0.0
            new[np.sign(new) != sgn] = 0.0
            cur[act] = new
            sgn_all[act] = np.where(new == 0.0, 0.0, sgn)
        return None


def lasso_fit(X, y, penalty, theta0=None, tol=1e-8, max_sweeps=10_000) -> LassoFit:
    """Minimise ``||y - X theta||^2 + penalty * ||theta||_1`` (no intercept)."""
    return LassoProblem(X, y).solve(penalty, theta0=theta0, tol=tol, max_sweeps=max_sweeps)


def penalty_max(X, y) -> float:
    return LassoProblem(X, y).xi_max


def bic(rss: float, n_active: int, n_obs: int) -> float:
    rss = max(rss, np.finfo(float).tiny)
    return n_obs * np.log(rss / n_obs) + n_active * np.log(n_obs)


def select_penalty_bic(X, y, grid_size: int = 100, ratio: float = 1e-4, warm_start: bool = True,
                       problem: LassoProblem | None = None, tol=1e-8, max_active_frac: float | None = 0.5):
    """Pick the penalty minimising ``T0 log(RSS/T0) + |active| log T0``.

    The grid is log-spaced from ``xi_max`` down to ``ratio * xi_max``.  Ties
    resolve toward the larger penalty.  Returns ``(xi_star, path)`` with
    ``path`` a list of ``(xi, LassoFit, bic)`` in grid order.

    When the number of predictors is close to ``T0`` the small-penalty end
    of the grid interpolates the data, ``log(RSS)`` diverges and the
    criterion is meaningless there.  The path therefore stops at the first
    fit with more than ``max_active_frac * T0`` active predictors; pass
    ``None`` to walk the whole grid.
    """
    if grid_size < 2:
        raise ValidationError("grid_size must be at least 2")
    prob = problem if problem is not None else LassoProblem(X, y)
    n_obs = prob.y.size
    cap = np.inf if max_active_frac is None else max_active_frac * n_obs
    xmax = prob.xi_max
    if xmax == 0.0:
        fit = prob.solve(0.0, tol=tol)
        return 0.0, [(0.0, fit, bic(fit.rss, 0, n_obs))]
    grid = np.geomspace(xmax, xmax * ratio, grid_size)
    grid[0] = xmax
    path = []
    theta = None
    best, best_bic = None, np.inf
    for xi in grid:
        fit = prob.solve(xi, theta0=theta if warm_start else None, tol=tol)
        if fit.active_set.size > cap:
            break
        b = bic(fit.rss, fit.active_set.size, n_obs)
        path.append((float(xi), fit, b))
        if b < best_bic:
            best, best_bic = float(xi), b
        theta = fit.theta
    return best, path
