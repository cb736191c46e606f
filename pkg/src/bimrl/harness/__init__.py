"""Configuration, orchestration, metrics and plotting around the estimator."""

from .config import ABLATIONS, ExperimentConfig, canonicalize, load_config
from .plotting import plot_runs
from .runner import evaluate_checkpoint, load_checkpoint, read_metrics, run

__all__ = [
    "ABLATIONS",
    "ExperimentConfig",
    "canonicalize",
    "evaluate_checkpoint",
    "load_checkpoint",
    "load_config",
    "plot_runs",
    "read_metrics",
    "run",
]
