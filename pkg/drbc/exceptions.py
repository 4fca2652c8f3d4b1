"""Exceptions for the drbc library."""

__all__ = [
    "DrbcException",
    "DrbcInvalidDataException",
    "DrbcConfigException",
    "DrbcInternalException",
    "DrbcNonFinitePathException",
    "DrbcSupportMismatchException",
    "DrbcDegenerateScoresException",
    "DrbcNonPositiveMException",
    "DrbcNoConvergenceException",
    "DrbcEmptyBracketException",
    "DrbcRiccatiBlowupException",
    "DrbcSingularInformationException",
    "DrbcQuadratureUnderflowException",
    "DrbcComplexRootException",
    "DrbcInvalidPException",
    "DrbcZeroVarianceException",
]


class DrbcException(Exception):
    """Base exception for the drbc library."""


class DrbcInvalidDataException(DrbcException):
    """Exception for invalid data."""


class DrbcConfigException(DrbcException):
    """Exception for invalid experiment configuration."""


class DrbcInternalException(DrbcException):
    """Exception for internal errors."""


class DrbcNonFinitePathException(DrbcException):
    """Exception for simulated paths that left the finite range."""


class DrbcSupportMismatchException(DrbcException):
    """Exception for finite priors whose atoms differ."""


class DrbcDegenerateScoresException(DrbcException):
    """Exception for tilting problems where every score is equal."""


class DrbcNonPositiveMException(DrbcException):
    """Exception for a non-positive estimate of the exponential transform."""


class DrbcNoConvergenceException(DrbcException):
    """Exception for iterations that did not converge."""


class DrbcEmptyBracketException(DrbcException):
    """Exception for an invalid search bracket."""


class DrbcRiccatiBlowupException(DrbcException):
    """Exception for a diverging Riccati solution."""


class DrbcSingularInformationException(DrbcException):
    """Exception for a singular least-squares information matrix."""


class DrbcQuadratureUnderflowException(DrbcException):
    """Exception for a quadrature sum that vanished."""


class DrbcComplexRootException(DrbcException):
    """Exception for a negative discriminant in the closed-form wealth parameters."""


class DrbcInvalidPException(DrbcException):
    """Exception for a closed-form quadratic coefficient outside the admissible range."""


class DrbcZeroVarianceException(DrbcException):
    """Exception for performance metrics on terminals without dispersion."""
