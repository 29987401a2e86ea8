"""Experiment configuration: dataclass tree, validation and the cached loader."""

import copy
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from threading import Lock
from typing import Any, Dict, List, Mapping, Optional, Sequence

from cil_toolkit.core.model import CONVNET, MLP, BackboneSpec
from cil_toolkit.data.splits import SEEDED_ORDER, SplitSpec, parse_schedule
from cil_toolkit.learning.exemplar_memory import RANDOM, STRATEGIES
from cil_toolkit.learning.incremental_engine import BalancedFinetuneConfig, StepConfig
from cil_toolkit.learning.multitask_trainer import BaseTrainConfig
from cil_toolkit.learning.task_factory import (
    TaskPlan,
    make_decreasing_plan,
    make_fixed_size_plan,
    plan_from_label_lists,
)
from utils import load_yaml

from .constants import (
    DEFAULT_OUTPUT_DIR,
    EXEMPLAR_GRID,
    PLAN_DECREASING,
    PLAN_EXPLICIT,
    PLAN_FIXED,
    PLAN_KINDS,
    PLAN_SINGLE,
)

logger = logging.getLogger(__name__)


class ConfigValidationError(ValueError):
    """Raised when an experiment configuration violates a precondition."""


@dataclass
class SynthConfig:
    num_classes: int = 10
    n_per_class: int = 100
    dim: int = 32
    separation: float = 4.0
    noise_sigma: float = 1.0
    seed: int = 0


@dataclass
class DataConfig:
    path: Optional[str] = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    class_order: str = SEEDED_ORDER

    def to_dict(self) -> Dict[str, Any]:
        return {
            "path": self.path,
            "synth": None if self.path else vars(self.synth).copy(),
            "split": self.split.to_dict(),
            "class_order": self.class_order,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DataConfig":
        return cls(
            path=data.get("path"),
            synth=SynthConfig(**(data.get("synth") or {})),
            split=SplitSpec.from_dict(data.get("split", {})),
            class_order=data.get("class_order", SEEDED_ORDER),
        )


@dataclass
class BackboneConfig:
    """Backbone topology without the input shape, which comes from the dataset."""

    kind: str = MLP
    hidden_sizes: List[int] = field(default_factory=lambda: [64, 32])
    conv_channels: List[int] = field(default_factory=lambda: [16, 16, 32, 32])
    kernel_size: int = 3
    dropout_rate: float = 0.5

    def to_spec(self, input_shape: Sequence[int]) -> BackboneSpec:
        widths = self.hidden_sizes if self.kind == MLP else self.conv_channels
        return BackboneSpec(
            kind=self.kind,
            input_shape=tuple(input_shape),
            embedding_dim=int(widths[-1]) if widths else 0,
            hidden_sizes=list(self.hidden_sizes) if self.kind == MLP else [],
            conv_channels=list(self.conv_channels) if self.kind == CONVNET else [],
            kernel_size=self.kernel_size,
            dropout_rate=self.dropout_rate,
        )

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(vars(self))


@dataclass
class PlanConfig:
    kind: str = PLAN_SINGLE
    sizes: List[int] = field(default_factory=list)
    head_count: int = 1
    size: int = 0
    label_lists: List[List[int]] = field(default_factory=list)
    nested: bool = False

    @property
    def label(self) -> str:
        if self.kind == PLAN_DECREASING:
            return "[" + ",".join(str(s) for s in self.sizes) + "]"
        if self.kind == PLAN_FIXED:
            return f"[F+{self.head_count - 1}x{self.size}]"
        if self.kind == PLAN_EXPLICIT:
            return "[" + ",".join(str(len(l)) for l in self.label_lists) + "]"
        return "[F]"

    def build(self, base_classes: Sequence[int], seed: int) -> TaskPlan:
        if self.kind == PLAN_SINGLE:
            return plan_from_label_lists([list(base_classes)], base_classes, seed)
        if self.kind == PLAN_DECREASING:
            return make_decreasing_plan(base_classes, self.sizes, seed, nested=self.nested)
        if self.kind == PLAN_FIXED:
            return make_fixed_size_plan(base_classes, self.head_count, self.size, seed)
        return plan_from_label_lists(self.label_lists, base_classes, seed)

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(vars(self))


@dataclass
class ExemplarConfig:
    capacity: int = 50
    strategy: str = RANDOM


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    schedule: str = "4-2-2-2"
    plan: PlanConfig = field(default_factory=PlanConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    base_train: BaseTrainConfig = field(default_factory=BaseTrainConfig)
    step: StepConfig = field(default_factory=StepConfig)
    exemplars: ExemplarConfig = field(default_factory=ExemplarConfig)
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: str = DEFAULT_OUTPUT_DIR
    jobs: int = 1

    SECTIONS = (
        "data",
        "schedule",
        "plan",
        "backbone",
        "base_train",
        "step",
        "exemplars",
        "seeds",
        "output_dir",
        "jobs",
    )

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        unknown = sorted(set(data) - set(cls.SECTIONS))
        if unknown:
            raise ConfigValidationError(f"Unknown configuration keys: {unknown}")
        try:
            return cls(
                data=DataConfig.from_dict(data.get("data", {})),
                schedule=str(data.get("schedule", "4-2-2-2")),
                plan=PlanConfig(**data.get("plan", {})),
                backbone=BackboneConfig(**data.get("backbone", {})),
                base_train=BaseTrainConfig.from_dict(data.get("base_train", {})),
                step=StepConfig.from_dict(data.get("step", {})),
                exemplars=ExemplarConfig(**data.get("exemplars", {})),
                seeds=[int(s) for s in data.get("seeds", [0])],
                output_dir=str(data.get("output_dir", DEFAULT_OUTPUT_DIR)),
                jobs=int(data.get("jobs", 1)),
            )
        except (TypeError, ValueError, KeyError) as e:
            raise ConfigValidationError(f"Invalid configuration: {e}") from e

    def to_dict(self) -> Dict[str, Any]:
        """Fully resolved configuration, echoed into every report."""
        return {
            "data": self.data.to_dict(),
            "schedule": self.schedule,
            "plan": self.plan.to_dict(),
            "backbone": self.backbone.to_dict(),
            "base_train": self.base_train.to_dict(),
            "step": self.step.to_dict(),
            "exemplars": vars(self.exemplars).copy(),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "jobs": self.jobs,
        }

    def for_seed(self, seed: int) -> "ExperimentConfig":
        """Single-seed copy with every seeded component derived from ``seed``."""
        return replace(
            self,
            seeds=[seed],
            base_train=replace(self.base_train, seed=seed),
            step=replace(self.step, seed=seed),
        )

    def with_overrides(
        self,
        seed: Optional[int] = None,
        out: Optional[str] = None,
        jobs: Optional[int] = None,
        schedule: Optional[str] = None,
        heads: Optional[Sequence[int]] = None,
        exemplars: Optional[int] = None,
        strategy: Optional[str] = None,
        dataset: Optional[str] = None,
    ) -> "ExperimentConfig":
        """Command-line values win over the configuration document."""
        config = copy.deepcopy(self)
        if seed is not None:
            config.seeds = [seed]
        if out is not None:
            config.output_dir = out
        if jobs is not None:
            config.jobs = jobs
        if schedule is not None:
            config.schedule = schedule
        if heads is not None:
            config.plan = PlanConfig(kind=PLAN_DECREASING, sizes=list(heads))
        if exemplars is not None:
            config.exemplars.capacity = exemplars
        if strategy is not None:
            config.exemplars.strategy = strategy
        if dataset is not None:
            config.data.path = dataset
        return config

    def validate(self, num_classes: int, feature_shape: Sequence[int]) -> None:
        """Check every precondition that can fail before training starts."""
        errors = []
        if not self.seeds:
            errors.append("at least one seed is required")
        if self.jobs < 1:
            errors.append("jobs must be at least 1")
        if self.exemplars.strategy not in STRATEGIES:
            errors.append(f"unknown exemplar strategy '{self.exemplars.strategy}'")
        if self.plan.kind not in PLAN_KINDS:
            errors.append(f"unknown plan kind '{self.plan.kind}'")
        try:
            schedule = parse_schedule(self.schedule, num_classes, 0, self.data.class_order)
        except ValueError as e:
            errors.append(str(e))
            schedule = None
        if schedule is not None:
            total = sum(schedule.step_sizes)
            if self.exemplars.capacity < total:
                errors.append(
                    f"exemplar capacity {self.exemplars.capacity} is below the {total} scheduled classes"
                )
            if self.plan.kind in PLAN_KINDS:
                try:
                    self.plan.build(schedule.base_classes, self.seeds[0] if self.seeds else 0)
                except ValueError as e:
                    errors.append(f"task plan: {e}")
        try:
            self.backbone.to_spec(feature_shape)
            self.step.validate()
            self.base_train.validate()
        except ValueError as e:
            errors.append(str(e))
        if errors:
            for error in errors:
                logger.error(f"Configuration error: {error}")
            raise ConfigValidationError("; ".join(errors))


class ExperimentConfigManager:
    """Process-wide cache of parsed configuration documents."""

    _instance: Optional["ExperimentConfigManager"] = None
    _lock = Lock()

    def __new__(cls) -> "ExperimentConfigManager":
        with cls._lock:
            if cls._instance is None:
                cls._instance = super().__new__(cls)
                cls._instance._initialize()
            return cls._instance

    def _initialize(self) -> None:
        self.documents: Dict[Path, Dict[str, Any]] = {}

    def load_document(self, path: Path) -> Dict[str, Any]:
        path = Path(path).resolve()
        with self._lock:
            if path not in self.documents:
                if not path.exists():
                    raise FileNotFoundError(f"Config file not found: {path}")
                try:
                    self.documents[path] = load_yaml(path)
                except Exception as e:
                    logger.error(f"Error loading config {path}: {e}")
                    raise
            return copy.deepcopy(self.documents[path])

    def load_experiment(self, path: Path) -> ExperimentConfig:
        return ExperimentConfig.from_dict(self.load_document(path))

    def reset(self) -> None:
        with self._lock:
            self.documents = {}


@dataclass
class SweepSettings:
    exemplar_grid: List[int] = field(default_factory=lambda: list(EXEMPLAR_GRID))
    max_fixed_heads: int = 6
    directions: List[str] = field(default_factory=lambda: [PLAN_DECREASING, PLAN_FIXED])
    # Balanced fine-tune of the exemplar-sweep baseline; per_class_m is capped by the budget.
    baseline_finetune: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.exemplar_grid or any(k <= 0 for k in self.exemplar_grid):
            raise ConfigValidationError("exemplar_grid must list positive budgets")
        if self.max_fixed_heads < 1:
            raise ConfigValidationError("max_fixed_heads must be at least 1")
        unknown = set(self.directions) - {PLAN_DECREASING, PLAN_FIXED}
        if unknown:
            raise ConfigValidationError(f"Unknown head sweep directions: {sorted(unknown)}")
        try:
            settings = self.baseline_settings()
        except TypeError as e:
            raise ConfigValidationError(f"Invalid baseline_finetune: {e}") from e
        if settings.per_class_m < 1 or settings.epochs < 1 or settings.lr <= 0:
            raise ConfigValidationError("baseline_finetune values must be positive")

    def baseline_settings(self) -> BalancedFinetuneConfig:
        return BalancedFinetuneConfig(**self.baseline_finetune)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SweepSettings":
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigValidationError(f"Invalid sweep settings: {e}") from e
