"""Experiment configuration, grids, export and the command line."""
from .config import ExperimentConfig, config_hash, load_config, load_preset, with_axis
from .export import export_aggregated, export_csv, export_normalized, read_csv
from .charts import emit_charts
from .lemmas import lemma_check
from .runner import ResultTable, optimal_compare, run_experiment, run_seed, run_sweep

__all__ = [
    "ExperimentConfig",
    "ResultTable",
    "config_hash",
    "emit_charts",
    "export_aggregated",
    "export_csv",
    "export_normalized",
    "lemma_check",
    "load_config",
    "load_preset",
    "optimal_compare",
    "read_csv",
    "run_experiment",
    "run_seed",
    "run_sweep",
    "with_axis",
]
