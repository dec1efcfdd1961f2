"""Exception hierarchy shared across the package."""


class QFieldError(Exception):
    """Base class for all package errors."""


class DomainError(QFieldError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericalError(QFieldError, ArithmeticError):
    """A numerical result violates a guaranteed bound (sign, tolerance, ...)."""


class QuadratureError(NumericalError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class FactorizationError(NumericalError):
    """Matrix factorization failed even at maximal diagonal jitter."""


class DegenerateError(QFieldError, ValueError):
    """A randomly generated configuration is degenerate (duplicate points,
    numerically singular covariance) and must be regenerated."""


class GridMismatchError(QFieldError, ValueError):
    """A sample grid does not contain the points an operation requires."""


class EmptyLadderError(QFieldError, ValueError):
    """The epsilon ladder passed to the modulus scan is empty."""


class InsufficientDataError(QFieldError, ValueError):
    """Not enough resolutions or replicates to build a convergence report."""


class VerificationError(QFieldError, AssertionError):
    """A mathematical assertion checked by a verifier does not hold."""


class ConfigError(QFieldError, ValueError):
    """A run configuration file or flag set is invalid."""


class StarvedScaleWarning(UserWarning):
    """Some epsilon in a ladder admits no grid pair; reported, not fatal."""
