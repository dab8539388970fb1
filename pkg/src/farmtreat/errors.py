"""Exception hierarchy.  The CLI maps these onto exit codes 2 and 3."""


class FarmTreatError(Exception):
    """Base class for all package errors."""


class ValidationError(FarmTreatError, ValueError):
    """Bad input: malformed files, inconsistent shapes, violated preconditions."""


class NumericalError(FarmTreatError, ArithmeticError):
    """A numerical stage failed (rank deficiency, non-convergence, degeneracy)."""


class RankDeficientError(NumericalError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class ConvergenceError(NumericalError):
    def __init__(self, message, last_delta=None):
        super().__init__(message)
        self.last_delta = last_delta


class StageError(NumericalError):
    """Wraps a failure from one pipeline stage, tagged with stage and unit."""

    def __init__(self, stage, unit, cause):
        self.stage = stage
        self.unit = unit
        self.cause = cause
        super().__init__(f"{stage} failed for unit {unit!r}: {cause}")
