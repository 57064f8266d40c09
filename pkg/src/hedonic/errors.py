"""Exception hierarchy shared by all solver modules."""


class HedonicError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 5


class ValidationError(HedonicError, ValueError):
    exit_code = 2


class DimensionMismatch(ValidationError):
    pass


class NegativeMass(ValidationError):
    pass


class ParseError(ValidationError):
    """Malformed market, shares or result document.

    ``line`` and ``column`` are set when the failure is syntactic.
    """

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class InfeasibleMass(HedonicError, ValueError):
    exit_code = 2


class ConstraintViolation(HedonicError, ValueError):
    exit_code = 2


class NotAProbability(HedonicError, ValueError):
    exit_code = 4


class BoundarySupport(HedonicError, ValueError):
    """Some share is zero, so log-odds (and conjugate gradients) are undefined."""

    exit_code = 4


class DeadQuality(HedonicError, ValueError):
    exit_code = 2


class TooLarge(HedonicError, ValueError):
    exit_code = 2


class NonIntegralMasses(HedonicError, ValueError):
    exit_code = 2


class MaxIterations(HedonicError, RuntimeError):
    """Iterative solver stopped before convergence; ``partial`` holds the last iterate."""

    exit_code = 3

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class DualInconsistency(HedonicError, RuntimeError):
    exit_code = 5


class AllInfeasibleRowWarning(UserWarning):
    """A producer or consumer type can reach no quality and will always opt out."""
