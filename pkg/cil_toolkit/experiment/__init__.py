from .config import (
    BackboneConfig,
    ConfigValidationError,
    DataConfig,
    ExemplarConfig,
    ExperimentConfig,
    ExperimentConfigManager,
    PlanConfig,
    SweepSettings,
    SynthConfig,
)
from .runner import BaseRun, ExperimentRunner, SeedInputs, head_sweep_plans
from .reports import add_baseline_delta, summarize, write_csv, write_experiment_report, write_json, write_table

__all__ = [
    # Configuration
    "BackboneConfig",
    "ConfigValidationError",
    "DataConfig",
    "ExemplarConfig",
    "ExperimentConfig",
    "ExperimentConfigManager",
    "PlanConfig",
    "SweepSettings",
    "SynthConfig",
    # Running
    "BaseRun",
    "ExperimentRunner",
    "SeedInputs",
    "head_sweep_plans",
    # Reports
    "add_baseline_delta",
    "add_baseline_delta",
    "summarize",
    "write_csv",
    "write_experiment_report",
    "write_json",
    "write_table",
]
