"""Exception types shared across the package."""


class BilevelError(Exception):
    """Base class for all package errors."""


class DimensionError(BilevelError):
    """Grid/shape mismatch between operands."""


class UnboundedError(BilevelError):
    """A requested bound constant does not exist for this potential."""


class DivergenceError(BilevelError):
    """Lower-level iteration produced a non-finite cost."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class SpdViolationError(BilevelError):
    """CG detected a direction of non-positive curvature."""


class StepTooLargeError(BilevelError):
    """Upper-level loss increased repeatedly at a constant step size."""


class ConfigError(BilevelError):
    """Invalid or unknown experiment configuration entry."""


class FormatError(BilevelError):
    """Malformed signal or parameter file."""
