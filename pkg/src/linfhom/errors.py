"""Exception hierarchy shared by all solvers."""

from __future__ import annotations


class LinfhomError(Exception):
    """Base class for every error raised by the package."""


class BoundaryStencilError(LinfhomError):
    """A one-sided stencil would leave a non-periodic grid."""


class DomainError(LinfhomError):
    """A query point lies outside the grid hull."""


class EmptyWindowError(LinfhomError):
    """A residual or comparison window contains no nodes."""


class DegenerateMediumError(LinfhomError):
    """Medium parameters violate the declared positivity or size bounds."""


class CoercivityError(LinfhomError):
    """No sublevel radius was found below the hard cap."""


class EmptySublevelError(LinfhomError):
    """The requested level lies below the minimum of the Hamiltonian."""


class InfeasibleLevelError(LinfhomError):
    """No monotone node update exists at the requested level."""


class ConvergenceError(LinfhomError):
    """An iterative solver stopped before reaching its tolerance.

    Attributes:
        residual: last measured residual or node change.
        iterations: number of completed iterations.
        partial: the last iterate, when available.
    """

    def __init__(self, message, residual=float("nan"), iterations=0, partial=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.partial = partial


class RangeTooSmallError(LinfhomError):
    """A tabulated quantity reaches the edge of its momentum grid."""


class InvalidConfigError(LinfhomError):
    """A comparison configuration or experiment configuration is malformed."""


class ReachabilityError(LinfhomError):
    """Every candidate point is excluded by the Lagrangian sentinel."""


class ValidationRejectedError(LinfhomError):
    """A constructed field failed its post-hoc audit."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class UnreliableEstimateWarning(UserWarning):
    """A point estimate whose spatial oscillation dwarfs its convergence in delta."""
