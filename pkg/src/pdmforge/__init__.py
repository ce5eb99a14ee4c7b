"""Exactly solvable position-dependent-mass systems by point canonical
transformation, with an independent finite-difference verifier."""

from .errors import (
    BoundaryLeakError,
    ConstructionError,
    DegenerateSupportError,
    DomainError,
    InconsistencyError,
    NodeProximityError,
    PdmError,
    QuadratureError,
    SolverError,
    UsageError,
)
from .pct import (
    ConstructedSystem,
    DeltaQ,
    Grid1D,
    PerturbationResult,
    apply_deltaQ,
    construct_harmonic_limit,
    construct_laguerre_exponential,
    deltaQ_2_over_g,
)
from .vonroos import VonRoosParams, eigs_lowest, verify_perturbation, verify_system

__version__ = "0.1.0"
