"""Monte-Carlo benchmark harness for the MM filters."""

from .experiments import (
    CircleTruth,
    ConfigError,
    ExperimentSpec,
    FilterOptions,
    build_exp1,
    build_exp2,
    kinematic_model,
    load_config,
    save_config,
)
from .metrics import mean_std, rmse
from .runner import RmseReport, RunRecord, execute_run, run_experiment, write_outputs

__all__ = [
    "CircleTruth",
    "ConfigError",
    "ExperimentSpec",
    "FilterOptions",
    "RmseReport",
    "RunRecord",
    "build_exp1",
    "build_exp2",
    "execute_run",
    "kinematic_model",
    "load_config",
    "mean_std",
    "rmse",
    "run_experiment",
    "save_config",
    "write_outputs",
]
