"""Crash-aware local Bayesian optimization for controller tuning."""

from .domain import Dataset, EvalOutcome, SearchDomain, denormalize, normalize
from .gp import GPHyperparams, GPModel, GradientBelief
from .optimizer import (
    GiboConfig,
    InfeasibleStartError,
    Objective,
    TuningRun,
    run_gibo,
    run_random_search,
)

__all__ = [
    "Dataset",
    "EvalOutcome",
    "SearchDomain",
    "normalize",
    "denormalize",
    "GPHyperparams",
    "GPModel",
    "GradientBelief",
    "GiboConfig",
    "InfeasibleStartError",
    "Objective",
    "TuningRun",
    "run_gibo",
    "run_random_search",
]

__version__ = "0.1.0"
