"""Experiment driver: configurations, runners, records, figures and the CLI."""

from .config import DEFAULTS, ExperimentConfig, load_config, make_config
from .experiments import (
    RUNNERS,
    run_bernoulli_polynomial,
    run_bg,
    run_cluster_exactness,
    run_convergence_L,
    run_einstein_sweep,
    run_example26,
    run_experiment,
    run_scaling_dilation,
)
from .plots import emit_plots
from .records import ResultRecord, read_record, write_record
from .stats import RunningStats, linear_fit, loglog_slope

__all__ = [
    "DEFAULTS",
    "ExperimentConfig",
    "load_config",
    "make_config",
    "RUNNERS",
    "run_bernoulli_polynomial",
    "run_bg",
    "run_cluster_exactness",
    "run_convergence_L",
    "run_einstein_sweep",
    "run_example26",
    "run_experiment",
    "run_scaling_dilation",
    "emit_plots",
    "ResultRecord",
    "read_record",
    "write_record",
    "RunningStats",
    "linear_fit",
    "loglog_slope",
]
