"""Exception types shared across the package."""


class IsacPilotError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(IsacPilotError, ValueError):
    """A scalar or structural parameter is outside its documented range."""


class InvalidRegionError(InvalidParameterError):
    """An angular integration region is empty or reversed."""


class DimensionError(IsacPilotError, ValueError):
    """Array shapes are inconsistent with the documented contracts."""


class NumericError(IsacPilotError, ArithmeticError):
    """A numerical operation failed (factorization, conditioning, overflow)."""


class SingularMatrixError(NumericError):
    """A matrix that must be invertible is numerically rank deficient."""


class ObjectiveDomainError(NumericError):
    """The argument of a logarithm left its domain.

    Carries the offending value in ``value`` so callers can report it.
    """

    def __init__(self, message: str, value: float):
        super().__init__(message)
        self.value = value


class UnsupportedModelError(IsacPilotError, ValueError):
    """The supplied model violates a structural assumption of the operation."""
