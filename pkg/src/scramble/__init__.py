"""Sparse, cellwise robust principal component analysis by Riemannian gradient descent."""

__version__ = "0.1.0"

from .core import (
    Center,
    FitConfig,
    FitResult,
    Init,
    fit,
    initialize,
    reconstruct,
    transform,
)
from .loss import LossFamily, LossSpec, PenaltySpec
from .stiefel import ConvergenceTrace, DivergenceError, OptimizerConfig
from .tuning import BayesOptConfig, bayes_opt_tune, grid_tune, tpo_score

__all__ = [
    "BayesOptConfig",
    "Center",
    "ConvergenceTrace",
    "DivergenceError",
    "FitConfig",
    "FitResult",
    "Init",
    "LossFamily",
    "LossSpec",
    "OptimizerConfig",
    "PenaltySpec",
    "bayes_opt_tune",
    "fit",
    "grid_tune",
    "initialize",
    "reconstruct",
    "tpo_score",
    "transform",
]
