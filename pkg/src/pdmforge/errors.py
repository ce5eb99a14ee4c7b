"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code it maps to, so the command front end
never has to guess.
"""


class PdmError(Exception):
    """Base class for every error raised by pdmforge."""

    exit_code = 1


class DomainError(PdmError, ValueError):
    """An argument lies outside the domain an operation is defined on."""

    exit_code = 2


class UsageError(PdmError):
    """An operation was applied to an object it does not support."""

    exit_code = 2


class ConstructionError(PdmError):
    """The (mass, coordinate map, family) inputs cannot form a system."""

    exit_code = 3


class InconsistencyError(ConstructionError):
    """The level split W_n - W_0 is not constant: not a solvable triple."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NodeProximityError(PdmError):
    """A logarithmic derivative F'/F was requested too close to a node of F."""

    exit_code = 4

    def __init__(self, message, n=None, g=None):
        super().__init__(message)
        self.n = n
        self.g = g


class BoundaryLeakError(PdmError):
    """A state is not negligible at the edge of the grid window."""

    exit_code = 5


class DegenerateSupportError(BoundaryLeakError):
    """A state has (numerically) zero norm on the grid."""


class SolverError(PdmError):
    """An iterative numerical method failed to converge."""

    exit_code = 6


class QuadratureError(SolverError):
    """Adaptive quadrature hit its refinement cap; carries the best estimate."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate
