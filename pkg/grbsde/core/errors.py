"""
Exception hierarchy for the GRBSDE laboratory.

Every error carries a stable ``code`` that ends up in summaries and exit
messages, so callers can match on it without parsing text.
"""

from typing import Any, Dict, List, Optional


class GRBSDEError(Exception):
    """Base class for all laboratory errors"""

    code = "grbsde-error"

    def __init__(self, message: str, witness: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.witness = witness or {}

    def __str__(self) -> str:
        base = super().__str__()
        return f"[{self.code}] {base}"


class InvalidIntensityError(GRBSDEError):
    code = "invalid-intensity"


class EmptyGridError(GRBSDEError):
    code = "empty-grid"


class IncompleteProcessError(GRBSDEError):
    code = "incomplete-process"


class NotAMartingaleIncrementError(GRBSDEError):
    code = "not-a-martingale-increment"


class MarkDimensionError(GRBSDEError):
    code = "mark-dimension-error"


class NonMonotoneStepError(GRBSDEError):
    code = "non-monotone-step"


class SolverFailureError(GRBSDEError):
    code = "solver-failure"


class InvalidScheduleError(GRBSDEError):
    code = "invalid-schedule"


class InvalidStoppingTimeError(GRBSDEError):
    code = "invalid-stopping-time"


class EnumerationTooLargeError(GRBSDEError):
    code = "enumeration-too-large"


class InvalidSpaceError(GRBSDEError):
    code = "invalid-space"


class InsufficientHistoryError(GRBSDEError):
    code = "insufficient-history"


class PreconditionViolatedError(GRBSDEError):
    code = "precondition-violated"


class ConfigIOError(GRBSDEError):
    code = "io-error"


class ConfigError(GRBSDEError):
    """Schema or numeric violations; all of them, not just the first"""

    code = "config-error"

    def __init__(self, violations: List[Dict[str, str]]):
        self.violations = violations
        lines = [f"{v['path']}: {v['message']}" for v in violations]
        super().__init__("; ".join(lines) or "invalid configuration")
