"""Exception hierarchy shared across the package."""


class DraxError(Exception):
    """Base class for all errors raised by this package."""


class InvalidDistributionError(DraxError, ValueError):
    pass


class DimensionError(DraxError, ValueError):
    pass


class DomainError(DraxError, ValueError):
    pass


class EnumerationCapError(DraxError):
    """State space too large to enumerate densely."""


class SingularityError(DraxError):
    """Velocity coefficients are undefined at this time (e.g. t=1)."""


class UnsupportedScheduleError(DraxError):
    pass


class InvalidRateError(DraxError):
    """A rate row has a negative off-diagonal entry."""


class StepSizeError(DraxError):
    """Euler transition vector is not a probability vector; use a smaller step."""


class PreconditionError(DraxError):
    pass


class TrainingDivergedError(DraxError):
    def __init__(self, message, last_finite_loss=None):
        super().__init__(message)
        self.last_finite_loss = last_finite_loss


class CompatibilityError(DraxError):
    """Checkpoint and configuration disagree on vocabulary or length."""


class InvariantViolation(DraxError):
    pass


class RefineGridError(DraxError):
    """Numerical integration drifted too far; refine the time grid."""


class ScorerError(DraxError):
    pass


class UndefinedMetricError(DraxError, ValueError):
    """Error rate requested against an empty reference."""
