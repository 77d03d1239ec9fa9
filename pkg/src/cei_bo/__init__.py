"""Bayesian optimization with a corrected expected-improvement acquisition."""

from .acquisition import AcqKind, AcquisitionSpec, corrected_ei, expected_improvement, tau
from .exceptions import InputError, NumericalError
from .gp import Dataset, GpPosterior, fit, fit_hyperparameters
from .kernels import KernelFamily, KernelSpec
from .loop import RunConfig, RunTrace, compute_profit, run_bo

__version__ = "0.1.0"

__all__ = [
    "AcqKind", "AcquisitionSpec", "corrected_ei", "expected_improvement", "tau",
    "InputError", "NumericalError", "Dataset", "GpPosterior", "fit", "fit_hyperparameters",
    "KernelFamily", "KernelSpec", "RunConfig", "RunTrace", "compute_profit", "run_bo",
]
