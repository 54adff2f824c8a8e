"""Optimal mass transport as descent on a space-time support with a free boundary."""
from .diagnostics import DiagnosticsReport, report, wasserstein_estimate
from .errors import (ConfigurationError, DataError, DomainError, ParseError, PositivityError,
                     SolverError, SpacetimeOTError, StepFailure)
from .grid_core import ScalarLattice, SpaceTimeGrid, VectorLattice
from .optimizer import PhaseSchedule, SolverState, initial_state, run
from .problems import ProblemSpec, build, self_transport_wrap
from .support_geometry import ConstraintMask, LevelSetSupport
from .transport_fields import FluxSpec, SolenoidalField

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "ConstraintMask", "DataError", "DiagnosticsReport", "DomainError",
    "FluxSpec", "LevelSetSupport", "ParseError", "PhaseSchedule", "PositivityError",
    "ProblemSpec", "ScalarLattice", "SolenoidalField", "SolverError", "SolverState",
    "SpaceTimeGrid", "SpacetimeOTError", "StepFailure", "VectorLattice", "build",
    "initial_state", "report", "run", "self_transport_wrap", "wasserstein_estimate",
]
