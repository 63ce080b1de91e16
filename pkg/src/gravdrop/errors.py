"""Exception types raised by the simulator."""


class GravdropError(Exception):
    """Base class for all package errors."""


class DomainError(GravdropError, ValueError):
    """Argument outside the domain of a constitutive law (e.g. nonpositive density)."""


class NonInvertible(GravdropError):
    """The (smoothed) flow map has a nonpositive Jacobian determinant somewhere."""


class UnderResolved(GravdropError, ValueError):
    """A discretization cannot resolve the requested length scale."""


class IncompatibleData(GravdropError):
    """Initial data violates the boundary compatibility conditions."""


class NoConvergence(GravdropError):
    """Picard iteration did not reach tolerance.

    Attributes
    ----------
    ratios : list of float
        Measured contraction ratios of the attempted iterates.
    """

    def __init__(self, message: str, ratios=None, distances=None):
        super().__init__(message)
        self.ratios = list(ratios or [])
        self.distances = list(distances or [])


class CFLViolation(GravdropError):
    """Wave energy grew by more than an order of magnitude in a single step."""


class ConfigError(GravdropError, ValueError):
    """Invalid configuration key or value."""
