"""Environment suite plumbing: configs, runs, records, plots and the CLI."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .plots import emit_plot_data, read_plot_data
from .records import RunRecord, load_checkpoint, save_checkpoint
from .runner import compare_initializations, run_experiment

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunRecord",
    "compare_initializations",
    "emit_plot_data",
    "load_checkpoint",
    "load_config",
    "parse_config",
    "read_plot_data",
    "run_experiment",
    "save_checkpoint",
]
