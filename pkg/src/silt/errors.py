"""Exception types shared across the package."""


class SiltError(Exception):
    """Base class for all package errors."""


class ResolutionError(SiltError):
    """Two grid discretizations that were required to match do not."""


class EmptyBasisError(SiltError):
    """Orthonormalization consumed every input (all numerically zero)."""


class DegeneracyError(SiltError):
    """A Gram matrix required to be invertible is numerically singular."""

    def __init__(self, message: str, det: float = 0.0):
        super().__init__(message)
        self.det = det


class IntegrabilityError(SiltError):
    """Monte Carlo rejection fraction exceeded the integrability threshold."""

    def __init__(self, message: str, rejected_fraction: float = 0.0):
        super().__init__(message)
        self.rejected_fraction = rejected_fraction


class ToleranceError(SiltError):
    """An adaptive quadrature failed to reach its requested tolerance."""


class ScopeError(SiltError):
    """A parameter is outside the range this implementation supports."""


class ConfigError(SiltError):
    """An experiment configuration is malformed."""
