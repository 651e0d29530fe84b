from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiment import (
    SWEEP_AXES,
    CycleRecord,
    RunSummary,
    compare_strategies,
    evaluate,
    load_dataset,
    run_experiment,
    run_seed,
    sweep,
    sweep_configs,
)

__all__ = [
    "ConfigError",
    "CycleRecord",
    "ExperimentConfig",
    "RunSummary",
    "SWEEP_AXES",
    "compare_strategies",
    "evaluate",
    "load_config",
    "load_dataset",
    "parse_config",
    "run_experiment",
    "run_seed",
    "sweep",
    "sweep_configs",
]
