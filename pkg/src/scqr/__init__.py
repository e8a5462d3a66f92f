"""Smoothed sequential censored quantile regression."""

__version__ = "0.1.0"

from .bootstrap import BootstrapResult, WeightScheme, confidence_intervals, run_bootstrap
from .cv import CvConfig, CvResult, cv_select_lambda0, deviance, martingale_residuals
from .data import (
    CensoredDataset,
    CoefficientProcess,
    QuantileGrid,
    load_dataset,
    load_process,
    make_uniform_grid,
    save_process,
)
from .exceptions import DataError, NoEventsError, NonConvergenceError
from .kernels import KernelKind, smoothed_check_loss
from .penalized import Penalty, PenaltyKind, fit_penalized_process, lambda_sequence, refit_on_support
from .simulation import SimDesign, Truth, gen_dataset, metrics
from .solver import SolverConfig, bandwidth_high_dim, bandwidth_low_dim, fit_process

__all__ = [
    "BootstrapResult",
    "CensoredDataset",
    "CoefficientProcess",
    "CvConfig",
    "CvResult",
    "DataError",
    "KernelKind",
    "NoEventsError",
    "NonConvergenceError",
    "Penalty",
    "PenaltyKind",
    "QuantileGrid",
    "SimDesign",
    "SolverConfig",
    "Truth",
    "WeightScheme",
    "bandwidth_high_dim",
    "bandwidth_low_dim",
    "confidence_intervals",
    "cv_select_lambda0",
    "deviance",
    "fit_penalized_process",
    "fit_process",
    "gen_dataset",
    "lambda_sequence",
    "load_dataset",
    "load_process",
    "make_uniform_grid",
    "martingale_residuals",
    "metrics",
    "refit_on_support",
    "run_bootstrap",
    "save_process",
    "smoothed_check_loss",
]
