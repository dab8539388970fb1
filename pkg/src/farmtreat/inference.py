"""Block-resampling test of the no-effect null from pre-intervention residuals."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = ["ResampleReport", "StatKind", "block_pvalue", "block_statistics", "resample_test", "statistic"]


class StatKind(str, enum.Enum):
    SUM_SQ = "sum_sq"
    SUM_ABS = "sum_abs"


def statistic(x, kind="sum_sq") -> float:
    """``sum(x**2)`` or ``sum(|x|)``."""
    x = np.asarray(x, dtype=float)
    if StatKind(kind) is StatKind.SUM_SQ:
        return float(np.sum(x * x))
    return float(np.sum(np.abs(x)))


def block_statistics(residuals, size: int, kind="sum_sq") -> np.ndarray:
    """Statistic over every run of ``size`` consecutive residuals (``len - size + 1`` blocks)."""
    v = np.asarray(residuals, dtype=float)
    if not 1 <= size <= v.size:
        raise ValidationError(f"block size {size} incompatible with {v.size} residuals")
    terms = v * v if StatKind(kind) is StatKind.SUM_SQ else np.abs(v)
    return np.lib.stride_tricks.sliding_window_view(terms, size).sum(axis=1)


def block_pvalue(residuals, effects, kind="sum_sq"):
    """Add-one p-value of ``phi(effects)`` against all pre-period blocks of the same length.

    ``p = (1 + #{phi_j >= phi_obs}) / (1 + n_blocks)``.
    Returns ``(p, observed, block_stats)``.
    """
    effects = np.atleast_1d(np.asarray(effects, dtype=float))
    stats = block_statistics(residuals, effects.size, kind)
    obs = statistic(effects, kind)
    p = (1.0 + np.count_nonzero(stats >= obs)) / (1.0 + stats.size)
    return p, obs, stats


@dataclass(frozen=True)
class ResampleReport:
    kind: str
    observed: float
    block_stats: np.ndarray
    p_value: float
    per_period_p: np.ndarray
    effects: np.ndarray
    block_size: int

    @property
    def n_blocks(self) -> int:
        return self.block_stats.size

    def to_dict(self, t0: int | None = None) -> dict:
        start = (t0 or 0) + 1
        return {
            "observed": self.observed,
            "p_value": self.p_value,
            "per_period": [
                {"t": start + k, "delta": float(d), "p": float(p)}
                for k, (d, p) in enumerate(zip(self.effects, self.per_period_p))
            ],
            "kind": self.kind,
            "n_blocks": self.n_blocks,
        }


def resample_test(fit, kind="sum_sq", min_blocks: int = 5, warn_blocks: int = 20,
                  zero_tol: float = 1e-10) -> ResampleReport:
    """Resampling test for a fitted counterfactual.

    The joint statistic uses blocks as long as the post period; the
    per-period p-values compare each single effect with single residuals.
    Values below ``zero_tol`` times the outcome scale are round-off and are
    set to exactly zero before comparison.
    """
    kind = StatKind(kind).value
    resid = np.asarray(fit.pre_residuals, dtype=float)
    effects = np.asarray(fit.effects, dtype=float)
    n_blocks = resid.size - effects.size + 1
    if n_blocks < min_blocks:
        raise ValidationError(f"only {n_blocks} pre-period blocks (need at least {min_blocks})")
    if n_blocks < warn_blocks:
        warnings.warn(f"only {n_blocks} pre-period blocks; p-values are coarse", stacklevel=2)
    floor = zero_tol * getattr(fit, "outcome_scale", 0.0)
    resid = np.where(np.abs(resid) <= floor, 0.0, resid)
    effects = np.where(np.abs(effects) <= floor, 0.0, effects)
    p, obs, stats = block_pvalue(resid, effects, kind)
    single = block_statistics(resid, 1, kind)
    per = np.array([(1.0 + np.count_nonzero(single >= statistic([d], kind))) / (1.0 + single.size)
                    for d in effects])
    return ResampleReport(kind, obs, stats, float(p), per, effects, effects.size)
