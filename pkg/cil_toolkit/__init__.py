"""
CIL Toolkit

Desk-scale class-incremental learning on numpy, including:
- A minimal model core (MLP / four-stage ConvNet backbones, multi-head classifiers)
- Multitask base training with hard parameter sharing
- Exemplar memory with random and herding selection
- Two-phase incremental fine-tuning with CE / KD losses
- Evaluation, sweeps and reproducible reports
"""

__version__ = "0.1.0"

from .core import BackboneSpec, ModelState, build_model, load_snapshot, save_snapshot
from .data import Dataset, load_dataset, parse_schedule, stratified_split, synth_blobs
from .learning import (
    BaseTrainConfig,
    ExemplarStore,
    LossSwitches,
    StepConfig,
    TaskPlan,
    run_experiment,
    run_step,
    train_base,
)
from .experiment import ExperimentConfig, ExperimentRunner

__all__ = [
    # Model core
    "BackboneSpec",
    "ModelState",
    "build_model",
    "load_snapshot",
    "save_snapshot",
    # Data
    "Dataset",
    "load_dataset",
    "parse_schedule",
    "stratified_split",
    "synth_blobs",
    # Learning
    "BaseTrainConfig",
    "ExemplarStore",
    "LossSwitches",
    "StepConfig",
    "TaskPlan",
    "run_experiment",
    "run_step",
    "train_base",
    # Experiments
    "ExperimentConfig",
    "ExperimentRunner",
]
