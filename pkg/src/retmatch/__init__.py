"""Retention-aware ranking for two-sided matching markets."""
from .engine import Market, SimConfig, run_simulation
from .errors import BudgetError, ConfigError, ConsistencyError, DegenerateInputError
from .rankers import (
    FairCoPolicy,
    MaxMatchPolicy,
    MRetPolicy,
    OptimalPolicy,
    Ranking,
    UniformPolicy,
    exposure_weights,
)
from .retention import BoostedRetention, ClusterBinnedRetention, OracleRetention, fit_boosted_model
from .world import WorldConfig, generate_world

__version__ = "0.1.0"

__all__ = [
    "BoostedRetention",
    "BudgetError",
    "ClusterBinnedRetention",
    "ConfigError",
    "ConsistencyError",
    "DegenerateInputError",
    "FairCoPolicy",
    "Market",
    "MaxMatchPolicy",
    "MRetPolicy",
    "OptimalPolicy",
    "OracleRetention",
    "Ranking",
    "SimConfig",
    "UniformPolicy",
    "WorldConfig",
    "exposure_weights",
    "fit_boosted_model",
    "generate_world",
    "run_simulation",
]
