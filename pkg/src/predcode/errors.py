"""Exception hierarchy shared by every module in the package."""


class PredCodeError(Exception):
    """Base class for all package errors."""


class ShapeError(PredCodeError, ValueError):
    """Operand shapes do not chain."""


class PrecisionError(PredCodeError, ValueError):
    """A covariance is not positive (definite)."""


class ConfigurationError(PredCodeError, ValueError):
    """An experiment, inference or learning configuration is invalid."""


class NumericError(PredCodeError, ArithmeticError):
    """A computation produced non-finite values or hit a singular matrix."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class ConvergenceWarning(UserWarning):
    """Iterative inference stopped at its step cap before reaching tolerance."""
