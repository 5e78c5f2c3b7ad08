"""Milstein-type simulation of SDEs with Markovian switching and a strong
convergence laboratory."""

__version__ = "0.1.0"

from .chain import ChainPath, GeneratorMatrix, sample_chain_path, validate_generator
from .convergence import (
    ExperimentPlan,
    fit_order,
    run_chain_statistics,
    run_moment_check,
    run_strong_error,
)
from .model import SdewmsProblem, builtin_catalog, get_problem, validate_problem
from .noise import build_merged_grid, coarsen, iterated_integrals, sample_noise
from .scheme import StepInputs, euler_step, milstein_step, simulate_trajectory

__all__ = [
    "ChainPath",
    "ExperimentPlan",
    "GeneratorMatrix",
    "SdewmsProblem",
    "StepInputs",
    "build_merged_grid",
    "builtin_catalog",
    "coarsen",
    "euler_step",
    "fit_order",
    "get_problem",
    "iterated_integrals",
    "milstein_step",
    "run_chain_statistics",
    "run_moment_check",
    "run_strong_error",
    "sample_chain_path",
    "sample_noise",
    "simulate_trajectory",
    "validate_generator",
    "validate_problem",
]
