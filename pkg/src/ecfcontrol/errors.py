"""Exception types shared across the package.

Every failure mode maps onto one of these so callers (service layer, CLI)
can translate them into stable exit codes and HTTP statuses.
"""


class ConfigurationError(ValueError):
    """Invalid user-supplied parameters: shapes, ranges, missing fields."""


class InsufficientDataError(ConfigurationError):
    """Too few samples for the requested operation."""


class DegenerateSmoothingError(ValueError):
    """Projected smoothing variance is zero; the inversion integral diverges."""


class AccuracyError(RuntimeError):
    """A numerical routine could not certify the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class ToleranceError(ConfigurationError):
    """Requested tolerance is incompatible with the input's own accuracy."""


class RestrictionFailureError(RuntimeError):
    """No valid concave under-approximation exists on the tabulated domain."""


class DomainError(ValueError):
    """Evaluation requested outside the certified domain."""


class PipelineError(RuntimeError):
    """A pipeline stage failed; carries the stage name and constraint row."""

    def __init__(self, stage, message, row=None):
        at = f"stage {stage}" if row is None else f"stage {stage}, row {row}"
        super().__init__(f"[{at}] {message}")
        self.stage = stage
        self.row = row
