"""Simulator for the regularized compressible Cucker-Smale-Navier-Stokes system."""

__version__ = "0.1.0"

from .config import RunConfig, load_config
from .coupling import CoupledState, FixedPointReport, Problem, RunResult, StepRecord, advance, picard_step, run
from .errors import (
    ConfigError,
    ConvergenceError,
    CSNSError,
    ExtensionError,
    InvariantViolation,
    NumericalError,
    PreconditionError,
    SchemeFailure,
    StepSizeError,
)
from .fluid import FluidField, PhysParams, RegParams, fluid_step, stress
from .grid import BoundaryData, SpatialGrid, VelocityGrid, build_extension, build_grids, classify_boundary, make_boundary
from .kernel import AlignmentMoments, KernelSpec, compute_moments, kernel_dissipation, make_kernel
from .kinetic import DistributionField, MomentSet, compute_momentset, kinetic_step, maxwellian
from .presets import PRESETS
from .runner import ScenarioOutcome, build_problem, check_run, continuation_sweep, run_scenario

__all__ = [
    "run_scenario",
    "load_config",
    "continuation_sweep",
    "check_run",
    "build_problem",
    "ScenarioOutcome",
    "RunConfig",
    "PRESETS",
    "AlignmentMoments",
    "BoundaryData",
    "CSNSError",
    "ConfigError",
    "ConvergenceError",
    "CoupledState",
    "DistributionField",
    "ExtensionError",
    "FixedPointReport",
    "FluidField",
    "InvariantViolation",
    "KernelSpec",
    "MomentSet",
    "NumericalError",
    "PhysParams",
    "PreconditionError",
    "Problem",
    "RegParams",
    "RunResult",
    "SchemeFailure",
    "SpatialGrid",
    "StepRecord",
    "StepSizeError",
    "VelocityGrid",
    "advance",
    "build_extension",
    "build_grids",
    "classify_boundary",
    "compute_moments",
    "compute_momentset",
    "fluid_step",
    "kernel_dissipation",
    "kinetic_step",
    "make_boundary",
    "make_kernel",
    "maxwellian",
    "picard_step",
    "run",
    "stress",
]
