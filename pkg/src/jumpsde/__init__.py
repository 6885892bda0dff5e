"""Simulation and stability analysis of jump-diffusion SDEs.

The package covers increment generation on reproducible counter-based
streams, a small problem catalog, theta and tamed integrators (plain and
compensated), closed-form mean-square stability factors, and Monte Carlo
experiments for strong convergence and long-time stability.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    InsufficientDataError,
    InvalidParameterError,
    JumpSdeError,
    NotApplicableError,
    NumericalError,
    SingularParameterError,
    SolverDivergenceError,
)
from .experiments import (
    ConvergenceConfig,
    ConvergenceReport,
    Reference,
    fit_order,
    run_amplification_validation,
    run_convergence,
    run_stability_sweep,
)
from .increments import IncrementGrid, RandomSource, coarsen, compensate, generate_brownian, generate_poisson
from .models import DriftSplit, JumpSdeProblem, LinearJumpSde, as_problem, get_problem
from .schemes import SchemeKind, SchemeSpec, integrate_path, make_stepper
from .stability import MeanSquareClass, classify_mean_square

__all__ = [
    "ConfigError",
    "ConvergenceConfig",
    "ConvergenceReport",
    "DriftSplit",
    "IncrementGrid",
    "InsufficientDataError",
    "InvalidParameterError",
    "JumpSdeError",
    "JumpSdeProblem",
    "LinearJumpSde",
    "MeanSquareClass",
    "NotApplicableError",
    "NumericalError",
    "RandomSource",
    "Reference",
    "SchemeKind",
    "SchemeSpec",
    "SingularParameterError",
    "SolverDivergenceError",
    "__version__",
    "as_problem",
    "classify_mean_square",
    "coarsen",
    "compensate",
    "fit_order",
    "generate_brownian",
    "generate_poisson",
    "get_problem",
    "integrate_path",
    "make_stepper",
    "run_amplification_validation",
    "run_convergence",
    "run_stability_sweep",
]
