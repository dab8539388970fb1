"""Factor-adjusted regularized counterfactuals for evaluating a treatment on one unit.

The treated unit's pre-intervention outcomes are decomposed into a
deterministic part, common factors and an idiosyncratic part; the last is
predicted from the control units' idiosyncratic parts with a LASSO.  The
counterfactual built from these pieces gives per-period effects, and a
block-resampling test of the pre-period residuals gives p-values.
"""

__version__ = "0.1.0"

from ._ext import COMPILED
from .counterfactual import (
    CounterfactualFit,
    FactorOptions,
    LassoOptions,
    MethodSpec,
    avg_effect,
    fit,
    fit_all,
)
from .detrend import DesignSpec, DetrendResult, detrend_panel
from .errors import (
    ConvergenceError,
    FarmTreatError,
    NumericalError,
    RankDeficientError,
    StageError,
    ValidationError,
)
from .factors import FactorFit, extract_factors, fit_factor_stage, select_rank
from .idio_test import IdioTestReport, idio_contribution_test
from .inference import ResampleReport, block_pvalue, resample_test
from .lasso import LassoFit, LassoProblem, select_penalty_bic
from .panel import Panel, load_panel, save_panel
from .pricing import PricingInputs, demand_slope, elasticity, optimal_price
from .randomizer import BalanceProblem, solve_balance
from .simulation import DgpParams, generate, run_monte_carlo

__all__ = [
    "COMPILED",
    "BalanceProblem",
    "ConvergenceError",
    "CounterfactualFit",
    "DesignSpec",
    "DetrendResult",
    "DgpParams",
    "FactorFit",
    "FactorOptions",
    "FarmTreatError",
    "IdioTestReport",
    "LassoFit",
    "LassoOptions",
    "LassoProblem",
    "MethodSpec",
    "NumericalError",
    "Panel",
    "PricingInputs",
    "RankDeficientError",
    "ResampleReport",
    "StageError",
    "ValidationError",
    "avg_effect",
    "block_pvalue",
    "demand_slope",
    "detrend_panel",
    "elasticity",
    "extract_factors",
    "fit",
    "fit_all",
    "fit_factor_stage",
    "generate",
    "idio_contribution_test",
    "load_panel",
    "optimal_price",
    "resample_test",
    "run_monte_carlo",
    "save_panel",
    "select_penalty_bic",
    "select_rank",
    "solve_balance",
]
