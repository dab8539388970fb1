"""From estimated sales effects to demand slopes, elasticities and optimal prices.

Demand is linear around the pre-intervention point,
``Q(p) = Qbar + beta * (p - p0)``, with quantities per store.  Profit is
``(1 - taxes) * p * Q(p) - costs * Q(p)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ValidationError

__all__ = [
    "OptimalPrice",
    "PricingInputs",
    "ScreenResult",
    "demand_slope",
    "elasticity",
    "optimal_price",
    "price_discrepancy",
    "profit",
    "revenue_optimal_price",
    "screen_units",
    "summary_row",
]

SUMMARY_COLUMNS = ("min", "q05", "q25", "median", "q75", "q95", "max", "mean", "sd")


@dataclass(frozen=True)
class PricingInputs:
    """Inputs for one unit.

    avg_effect : estimated average effect of the price change on sales.
    n_stores : stores in the unit; the slope is per store.
    price_change : price after minus price before.
    pre_price : price before the intervention.
    avg_qty : average counterfactual quantity per store.
    """

    avg_effect: float
    n_stores: int
    price_change: float
    pre_price: float
    avg_qty: float
    taxes: float = 0.0
    costs: float = 0.0

    def __post_init__(self):
        if self.price_change == 0:
            raise ValidationError("price change must be nonzero")
        if not self.n_stores > 0:
            raise ValidationError("n_stores must be positive")
        if not self.pre_price > 0:
            raise ValidationError("pre-intervention price must be positive")
        if not self.avg_qty > 0:
            raise ValidationError("average quantity must be positive")
        if not 0 <= self.taxes < 1:
            raise ValidationError("taxes must lie in [0, 1)")
        if self.costs < 0:
            raise ValidationError("costs must be nonnegative")


def demand_slope(inputs: PricingInputs) -> float:
    """``avg_effect / (n_stores * price_change)``."""
    if inputs.price_change == 0:
        raise ValidationError("price change must be nonzero")
    return inputs.avg_effect / (inputs.n_stores * inputs.price_change)


def elasticity(inputs: PricingInputs, slope: float | None = None) -> float:
    """Point elasticity ``beta * p0 / Qbar``."""
    if not inputs.avg_qty > 0:
        raise ValidationError("average quantity must be positive")
    b = demand_slope(inputs) if slope is None else slope
    return b * inputs.pre_price / inputs.avg_qty


@dataclass(frozen=True)
class OptimalPrice:
    price: float
    slope: float
    second_derivative: float  # of profit in p; negative at a maximum

    @property
    def is_maximum(self) -> bool:
        return self.second_derivative < 0


def optimal_price(inputs: PricingInputs, slope: float | None = None) -> OptimalPrice:
    """Vertex of the profit parabola.

    ``p* = [(1-taxes)(Qbar - beta p0) - beta costs] / (-2 beta (1-taxes))``.
    """
    b = demand_slope(inputs) if slope is None else slope
    if b >= 0:
        raise ValidationError("non-negative slope: optimum undefined")
    keep = 1.0 - inputs.taxes
    num = keep * (inputs.avg_qty - b * inputs.pre_price) - b * inputs.costs
    return OptimalPrice(num / (-2.0 * b * keep), b, 2.0 * b * keep)


def revenue_optimal_price(inputs: PricingInputs, slope: float | None = None) -> OptimalPrice:
    """Revenue maximiser: the profit optimum with no taxes and no costs."""
    plain = PricingInputs(inputs.avg_effect, inputs.n_stores, inputs.price_change,
                          inputs.pre_price, inputs.avg_qty)
    return optimal_price(plain, slope)


def profit(p, inputs: PricingInputs, slope: float | None = None):
    b = demand_slope(inputs) if slope is None else slope
    q = inputs.avg_qty + b * (np.asarray(p, dtype=float) - inputs.pre_price)
    return (1.0 - inputs.taxes) * p * q - inputs.costs * q


def price_discrepancy(p_star: float, current: float) -> float:
    """Percentage difference of the optimal price from the current one."""
    return 100.0 * (p_star - current) / current


@dataclass(frozen=True)
class ScreenResult:
    kept: list
    dropped: list
    fraction: float


def screen_units(records: Iterable, alpha: float = 0.10, expected_sign: int | None = None,
                 price_change: float | None = None) -> ScreenResult:
    """Keep units whose average effect has the expected sign and ``p <= alpha``.

    ``records`` yields ``(unit, avg_effect, p_value)``.  The expected sign
    is opposite to the price change unless given explicitly.
    """
    if expected_sign is None:
        if price_change is None or price_change == 0:
            raise ValidationError("need expected_sign or a nonzero price_change")
        expected_sign = -1 if price_change > 0 else 1
    if expected_sign not in (-1, 1):
        raise ValidationError("expected_sign must be -1 or 1")
    kept, dropped = [], []
    for unit, eff, p in records:
        ok = np.sign(eff) == expected_sign and p <= alpha
        (kept if ok else dropped).append(unit)
    total = len(kept) + len(dropped)
    return ScreenResult(kept, dropped, len(kept) / total if total else float("nan"))


def summary_row(values) -> dict:
    """Distribution summary used in the elasticity and price tables."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        return {k: float("nan") for k in SUMMARY_COLUMNS}
    q = np.quantile(v, [0.05, 0.25, 0.5, 0.75, 0.95])
    return {
        "min": float(v.min()),
        "q05": float(q[0]),
        "q25": float(q[1]),
        "median": float(q[2]),
        "q75": float(q[3]),
        "q95": float(q[4]),
        "max": float(v.max()),
        "mean": math.fsum(v) / v.size,
        "sd": float(v.std(ddof=1)) if v.size > 1 else float("nan"),
    }
