"""Spike-and-slab lasso biclustering with optional outcome guidance."""

__version__ = "0.1.0"

from .em import FitResult, run_sslb
from .evaluation import consensus_score, jaccard
from .model import (
    Bicluster,
    BiclusterSet,
    ExpressionMatrix,
    FitConfig,
    OutcomeMatrix,
    SoulConfig,
    ValidationError,
)
from .simulation import SimulationConfig, simulate_dataset

__all__ = [
    "Bicluster",
    "BiclusterSet",
    "ExpressionMatrix",
    "FitConfig",
    "FitResult",
    "OutcomeMatrix",
    "SimulationConfig",
    "SoulConfig",
    "ValidationError",
    "consensus_score",
    "jaccard",
    "run_sslb",
    "simulate_dataset",
]
