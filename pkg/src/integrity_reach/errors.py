"""Exception hierarchy shared by the library and the command line."""


class IntegrityReachError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ValidationError(IntegrityReachError, ValueError):
    """Inputs violate a documented precondition."""

    exit_code = 2


class DomainError(ValidationError):
    """Argument outside the mathematical domain of a calibration routine."""


class StructuralError(ValidationError):
    """The plant fails a structural requirement such as observability."""


class NumericalError(IntegrityReachError, ArithmeticError):
    """An iterative or factorization step failed numerically."""

    exit_code = 3


class NoFeasiblePolicyError(IntegrityReachError):
    """Even the densest enforcement schedule violates the safety threshold."""

    exit_code = 4
