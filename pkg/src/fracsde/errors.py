"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: validation problems (``DomainError``)
exit with 1, numerical failures with 2 and failed acceptance checks with 3.
"""


class FracSDEError(Exception):
    """Base class for all package errors."""


class DomainError(FracSDEError, ValueError):
    """An argument lies outside the domain of an operation."""


class ConfigError(DomainError):
    """An experiment configuration violates one of its invariants."""


class NumericalError(FracSDEError, ArithmeticError):
    """A computation could not be carried out in floating point."""


class CholeskyError(NumericalError):
    """The fBm covariance matrix was not numerically positive definite."""


class DriftBoundError(NumericalError):
    """A drift evaluation exceeded the sup-norm the field declared."""


class AcceptanceFailure(FracSDEError):
    """A hard (non-statistical) check failed during an experiment."""
