"""Principal-components factor stage: rank selection, extraction, idiosyncratic parts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .detrend import DetrendResult, ols_fit
from .errors import NumericalError, ValidationError

__all__ = [
    "STRATEGIES",
    "FactorFit",
    "default_rmax",
    "extract_factors",
    "fit_factor_stage",
    "select_rank",
]

STRATEGIES = ("exclude_treated", "impute", "zero_fill_post")


@dataclass(frozen=True)
class FactorFit:
    """Factor decomposition seen from one treated unit.

    Row 0 of ``loadings`` and ``idios`` belongs to the treated unit; rows
    ``1..m`` follow ``controls`` (panel row indices) in order.
    """

    factors: np.ndarray  # (T, r), F'F/T = I
    loadings: np.ndarray  # (1 + m, r)
    idios: np.ndarray  # (1 + m, T)
    rank: int
    eigvals: np.ndarray
    strategy: str
    treated: int
    controls: tuple
    t0: int
    residuals: np.ndarray  # (1 + m, T) detrended input, same row order
    design_adjustment: np.ndarray = np.zeros(0)  # treated design coefficients refitted with the loading

    @property
    def treated_loading(self) -> np.ndarray:
        return self.loadings[0]

    @property
    def common(self) -> np.ndarray:
        return self.loadings @ self.factors.T


def default_rmax(m: int, T: int) -> int:
    return max(1, min(8, m // 3, T // 3))


def select_rank(eigvals, r_max: int) -> int:
    """Eigenvalue-ratio rank: the k in 1..r_max maximising ev[k]/ev[k+1] (1-based).

    Ties go to the smaller k.
    """
    ev = np.asarray(eigvals, dtype=float)
    if r_max < 1:
        raise ValidationError("r_max must be at least 1")
    if ev.size < r_max + 1:
        raise ValidationError(f"need {r_max + 1} eigenvalues for r_max={r_max}, got {ev.size}")
    if np.any(ev < -1e-12 * max(1.0, abs(ev).max())):
        raise ValidationError("eigenvalues must be nonnegative")
    if np.all(ev[: r_max + 1] < 1e-12):
        raise NumericalError("degenerate eigenvalues: all below 1e-12")
    ev = np.maximum(ev[: r_max + 1], 0.0)
    floor = ev[0] * 1e-14
    ratios = ev[:-1] / np.maximum(ev[1:], floor)
    return int(np.argmax(ratios)) + 1


def _top_eigen(R, k):
    """Top-``k`` eigenpairs of R'R as (values desc, T-space unit vectors)."""
    m, T = R.shape
    k = min(k, m, T)
    if m <= T:
        A = R @ R.T
        n = m
    else:
        A = R.T @ R
        n = T
    if k == 0:
        return np.zeros(0), np.zeros((T, 0))
    if k < n:
        w, V = scipy.linalg.eigh(A, subset_by_index=[n - k, n - 1])
    else:
        w, V = scipy.linalg.eigh(A)
    w, V = w[::-1], V[:, ::-1]
    w = np.maximum(w, 0.0)
    if m <= T:
        # R'u = sqrt(w) v
        with np.errstate(divide="ignore", invalid="ignore"):
            V = (R.T @ V) / np.sqrt(np.where(w > 0, w, 1.0))
    return w, V


def _factors_from_eigen(R, w, V, r):
    m, T = R.shape
    if r == 0:
        return np.zeros((T, 0)), np.zeros((m, 0))
    scale = w[0] if w.size else 0.0
    numrank = int(np.sum(w > max(m, T) * np.finfo(float).eps * scale)) if scale > 0 else 0
    if r > numrank:
        raise NumericalError(f"requested rank {r} exceeds numerical rank {numrank}")
    F = np.sqrt(T) * V[:, :r]
    L = R @ F / T
    flip = L.sum(axis=0) < 0
    F[:, flip] *= -1
    L[:, flip] *= -1
    return F, L


def extract_factors(residuals, r: int, n_eigvals: int | None = None):
    """Principal components of an (m x T) residual matrix.

    Returns ``(factors, loadings, eigvals)``: factors are sqrt(T) times the
    top-r eigenvectors of R'R, loadings are R F / T, and ``eigvals`` are the
    leading eigenvalues of R'R in descending order (all of them unless
    ``n_eigvals`` is given).  Each loading column is signed to have a
    nonnegative sum.
    """
    R = np.asarray(residuals, dtype=float)
    if R.ndim != 2:
        raise ValidationError("residuals must be 2-d")
    if not np.all(np.isfinite(R)):
        raise ValidationError("residuals contain non-finite values")
    m, T = R.shape
    if not 0 <= r <= min(m, T):
        raise ValidationError(f"rank {r} outside [0, {min(m, T)}]")
    k = min(m, T) if n_eigvals is None else max(r, n_eigvals)
    w, V = _top_eigen(R, k)
    F, L = _factors_from_eigen(R, w, V, r)
    return F, L, w


def _pca(R, rank, r_max):
    m, T = R.shape
    if r_max is None:
        r_max = default_rmax(m, T)
    r_max = min(r_max, min(m, T) - 1) if rank is None else r_max
    k = (r_max + 1) if rank is None else max(rank, 1) + 1
    w, V = _top_eigen(R, min(k, min(m, T)))
    if rank is None:
        if not np.isfinite(w).all() or w.size == 0 or np.all(w < 1e-12):
            raise NumericalError("degenerate eigenvalues: all below 1e-12")
        rank = select_rank(w, r_max)
    F, L = _factors_from_eigen(R, w, V, rank)
    return F, L, w, rank


def fit_factor_stage(
    detrended: DetrendResult,
    treated: int,
    t0: int,
    strategy: str = "exclude_treated",
    r_max: int | None = None,
    rank: int | None = None,
    controls=None,
    sample: str = "pre_only",
    design=None,
) -> FactorFit:
    """Estimate factors, loadings and idiosyncratic components around one treated unit.

    ``exclude_treated`` extracts factors from the controls only and obtains
    the treated loading by OLS of its residuals on the factors over the
    estimation window.  ``impute`` replaces the treated post-period with that
    first-pass fit and re-extracts on all units once.  ``zero_fill_post``
    sets the treated post-period to zero for extraction only.  With
    ``sample='full_sample'`` the estimation window is the whole sample and
    nothing is hidden from the extraction.

    ``design`` is the treated unit's first-stage design over all periods.
    When given, the loading regression also includes the design columns, so
    the treated unit's trend and covariate terms are estimated jointly with
    its loading.  The controls are detrended on a longer window than the
    treated unit, so their factors are not orthogonal to the design over the
    treated window; without this step that overlap is extrapolated into the
    post period.  The design coefficients are reported as
    ``design_adjustment`` and the treated residual row includes them.
    """
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown factor strategy {strategy!r}")
    R_all = detrended.residuals
    n, T = R_all.shape
    if controls is None:
        controls = tuple(i for i in range(n) if i != treated)
    controls = tuple(controls)
    if not controls:
        raise ValidationError("no control units")
    if not 1 < t0 < T:
        raise ValidationError(f"t0 must satisfy 1 < t0 < T={T}")
    last = t0 if sample == "pre_only" else T
    hide = sample == "pre_only"
    r1 = R_all[treated]
    Rc = R_all[list(controls)]

    D = None if design is None else np.asarray(design, dtype=float)
    if D is not None and D.shape[0] != T:
        raise ValidationError(f"design has {D.shape[0]} rows, expected {T}")
    k = 0 if D is None else D.shape[1]

    def loading_on(F):
        # (loading, design adjustment)
        if F.shape[1] == 0:
            return np.zeros(0), np.zeros(k)
        if k == 0:
            return ols_fit(F[:last], r1[:last])[0], np.zeros(0)
        coef, _, _ = ols_fit(np.hstack([D[:last], F[:last]]), r1[:last])
        return coef[k:], coef[:k]

    F, Lc, w, r = _pca(Rc, rank, r_max)
    lam1, adj = loading_on(F)
    if strategy != "exclude_treated":
        r1_ext = r1 - D @ adj if k else r1.copy()
        if hide:
            r1_ext[t0:] = F[t0:] @ lam1 if strategy == "impute" else 0.0
        F, L, w, r = _pca(np.vstack([r1_ext, Rc]), rank, r_max)
        Lc = L[1:]
        lam1, adj = loading_on(F)

    loadings = np.vstack([lam1[None, :] if r else np.zeros((1, 0)), Lc])
    r1_adj = r1 - D @ adj if k else r1
    resid = np.vstack([r1_adj, Rc])
    idios = resid - loadings @ F.T
    for a in (F, loadings, idios, resid, w, adj):
        a.setflags(write=False)
    return FactorFit(F, loadings, idios, r, w, strategy, treated, controls, t0, resid, adj)
