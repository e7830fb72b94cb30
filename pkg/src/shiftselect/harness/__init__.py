"""Configuration, training, evaluation and ablation grids."""

from .ablate import Grid, run_ablation
from .config import ConfigError, RunConfig
from .train import IncompatibleCheckpoint, NumericFailure, evaluate, evaluate_model, train

__all__ = [
    "ConfigError",
    "evaluate",
    "evaluate_model",
    "Grid",
    "IncompatibleCheckpoint",
    "NumericFailure",
    "run_ablation",
    "RunConfig",
    "train",
]
