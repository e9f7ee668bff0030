class SelfNormError(Exception):
    """Base class for errors raised by this package."""


class ParameterError(SelfNormError, ValueError):
    """An input lies outside the domain an operation is defined on."""


class RegimeError(ParameterError):
    """A lambda value lies outside the regime where a supermartingale bound holds."""


class NumericalError(SelfNormError, ArithmeticError):
    """A quadrature, root-finder or factorization did not meet its tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class LogCapWarning(RuntimeWarning):
    """A log supermartingale value exceeded the configured cap."""
