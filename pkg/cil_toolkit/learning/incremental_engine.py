"""Incremental steps: head expansion, composable CE/KD losses, two-phase fine-tuning."""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from frozendict import frozendict

from cil_toolkit.core.losses import (
    DEFAULT_TEMPERATURE,
    CrossEntropyTerm,
    DistillationTerm,
    WeightedSum,
)
from cil_toolkit.core.model import ModelState, expand_head, model_checksum, predict_logits
from cil_toolkit.core.optim import (
    BACKBONE_ONLY,
    DEFAULT_MOMENTUM,
    NONE,
    EarlyStopping,
    LrSchedule,
    OptimizerState,
    set_freeze,
)
from cil_toolkit.data.dataset import Dataset
from cil_toolkit.data.splits import ClassSchedule

from .exemplar_memory import ExemplarStore, build_balanced_set, rebalance
from .loops import accuracy, local_labels, train_epoch
from .metrics import confusion, group_accuracy, maybe_avg_incremental_accuracy, overall_accuracy

logger = logging.getLogger(__name__)

HEAD_ID = 0

CE_NEW = "ce_new"
CE_OLD = "ce_old"
KD_NEW = "kd_new"
KD_OLD = "kd_old"
TERMS = (CE_NEW, CE_OLD, KD_NEW, KD_OLD)
TERM_LABELS = frozendict({CE_NEW: "CE_N", CE_OLD: "CE_O", KD_NEW: "KD_N", KD_OLD: "KD_O"})

# Loss ablation rows in reporting order: (ce_new, ce_old, kd_new, kd_old).
LOSS_GRID = frozendict(
    {
        "CE_N": (True, False, False, False),
        "CE_N+KD_N": (True, False, True, False),
        "CE_N+CE_O": (True, True, False, False),
        "CE_N+CE_O+KD_N": (True, True, True, False),
        "CE_N+CE_O+KD_O": (True, True, False, True),
        "CE_N+CE_O+KD_N+KD_O": (True, True, True, True),
    }
)

# Random streams derived per step from StepConfig.seed.
SHUFFLE_STREAM = 1
EXPAND_STREAM = 2
BALANCED_STREAM = 3


@dataclass(frozen=True)
class LossSwitches:
    ce_new: bool = True
    ce_old: bool = False
    kd_new: bool = False
    kd_old: bool = False
    temperature: float = DEFAULT_TEMPERATURE
    weights: Mapping[str, float] = field(default_factory=lambda: frozendict())

    def __post_init__(self) -> None:
        if not self.ce_new:
            raise ValueError("ce_new must be enabled")
        if self.temperature <= 0:
            raise ValueError(f"Temperature must be positive, got {self.temperature}")
        unknown = set(self.weights) - set(TERMS)
        if unknown:
            raise ValueError(f"Unknown loss terms in weights: {sorted(unknown)}")
        object.__setattr__(self, "weights", frozendict(self.weights))

    def weight(self, term: str) -> float:
        return float(self.weights.get(term, 1.0))

    def enabled(self, term: str) -> bool:
        return bool(getattr(self, term))

    def active(self, term: str) -> bool:
        """Enabled with a nonzero weight; a disabled term behaves as weight 0."""
        return self.enabled(term) and self.weight(term) != 0

    def effective_weight(self, term: str) -> float:
        return self.weight(term) if self.enabled(term) else 0.0

    @property
    def uses_exemplars(self) -> bool:
        return self.active(CE_OLD) or self.active(KD_OLD)

    @property
    def uses_teacher(self) -> bool:
        return self.active(KD_NEW) or self.active(KD_OLD)

    @property
    def label(self) -> str:
        return "+".join(TERM_LABELS[t] for t in TERMS if self.enabled(t))

    def to_dict(self) -> Dict[str, Any]:
        return {
            **{t: self.enabled(t) for t in TERMS},
            "temperature": self.temperature,
            "weights": {t: self.weight(t) for t in TERMS},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LossSwitches":
        return cls(
            **{t: bool(data.get(t, t == CE_NEW)) for t in TERMS},
            temperature=float(data.get("temperature", DEFAULT_TEMPERATURE)),
            weights={k: float(v) for k, v in data.get("weights", {}).items()},
        )

    @classmethod
    def from_label(cls, label: str, **kwargs: Any) -> "LossSwitches":
        if label not in LOSS_GRID:
            raise KeyError(f"Unknown loss configuration: {label}")
        return cls(*LOSS_GRID[label], **kwargs)


def loss_grid(temperature: float = DEFAULT_TEMPERATURE) -> List[LossSwitches]:
    """The six loss-ablation configurations in reporting order."""
    return [LossSwitches.from_label(label, temperature=temperature) for label in LOSS_GRID]


@dataclass
class PhaseConfig:
    lr: float = 0.01
    epochs: int = 10
    schedule: str = "constant"

    def lr_schedule(self, epochs: int) -> LrSchedule:
        return LrSchedule(kind=self.schedule, lr0=self.lr, total_epochs=max(epochs, 1))


@dataclass
class Phase2Config:
    lr: float = 0.001
    epochs_max: int = 30
    patience: int = 5
    schedule: str = "constant"

    def lr_schedule(self, epochs: int) -> LrSchedule:
        return LrSchedule(kind=self.schedule, lr0=self.lr, total_epochs=max(epochs, 1))


@dataclass
class BalancedFinetuneConfig:
    per_class_m: int = 10
    epochs: int = 5
    lr: float = 0.001


@dataclass
class StepConfig:
    losses: LossSwitches = field(default_factory=LossSwitches)
    phase1: PhaseConfig = field(default_factory=PhaseConfig)
    phase2: Phase2Config = field(default_factory=Phase2Config)
    batch_size: int = 32
    balanced_finetune: Optional[BalancedFinetuneConfig] = None
    seed: int = 0
    momentum: float = DEFAULT_MOMENTUM
    init_scale: float = 0.01
    dropout_in_finetune: bool = True

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.phase1.lr <= self.phase2.lr:
            raise ValueError(
                f"Phase-1 learning rate {self.phase1.lr} must exceed phase-2 rate {self.phase2.lr}"
            )
        if self.phase1.epochs < 0 or self.phase2.epochs_max < 0:
            raise ValueError("Epoch counts must be nonnegative")
        if self.phase2.patience < 0:
            raise ValueError("Phase-2 patience must be nonnegative")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.init_scale < 0:
            raise ValueError("init_scale must be nonnegative")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "losses": self.losses.to_dict(),
            "phase1": vars(self.phase1).copy(),
            "phase2": vars(self.phase2).copy(),
            "batch_size": self.batch_size,
            "balanced_finetune": (
                vars(self.balanced_finetune).copy() if self.balanced_finetune else None
            ),
            "seed": self.seed,
            "momentum": self.momentum,
            "init_scale": self.init_scale,
            "dropout_in_finetune": self.dropout_in_finetune,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StepConfig":
        balanced = data.get("balanced_finetune")
        return cls(
            losses=LossSwitches.from_dict(data.get("losses", {})),
            phase1=PhaseConfig(**data.get("phase1", {})),
            phase2=Phase2Config(**data.get("phase2", {})),
            batch_size=int(data.get("batch_size", 32)),
            balanced_finetune=BalancedFinetuneConfig(**balanced) if balanced else None,
            seed=int(data.get("seed", 0)),
            momentum=float(data.get("momentum", DEFAULT_MOMENTUM)),
            init_scale=float(data.get("init_scale", 0.01)),
            dropout_in_finetune=bool(data.get("dropout_in_finetune", True)),
        )


@dataclass
class IncrementalState:
    student: ModelState
    teacher: Optional[ModelState]
    store: ExemplarStore
    seen_classes: List[int]
    step_index: int = 0


@dataclass
class StepData:
    """The canonical training corpus (exemplar indices refer to it) and validation split."""

    train: Dataset
    val: Dataset


@dataclass
class StepReport:
    step_index: int
    new_classes: List[int]
    seen_classes: List[int]
    corpus_size: int
    exemplars_used: int
    phase1_losses: List[float] = field(default_factory=list)
    phase2_val_history: List[float] = field(default_factory=list)
    phase2_best_epoch: Optional[int] = None
    balanced_losses: List[float] = field(default_factory=list)
    backbone_checksum_before_phase1: str = ""
    backbone_checksum_after_phase1: str = ""
    teacher_checksum_before: str = ""
    teacher_checksum_after: str = ""
    teacher_width: int = 0
    kd_compared_widths: List[int] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def phase2_epochs_run(self) -> int:
        return len(self.phase2_val_history)

    def to_dict(self, include_timing: bool = False) -> Dict[str, Any]:
        data = {
            "step_index": self.step_index,
            "new_classes": list(self.new_classes),
            "seen_classes": list(self.seen_classes),
            "corpus_size": self.corpus_size,
            "exemplars_used": self.exemplars_used,
            "phase1_losses": list(self.phase1_losses),
            "phase2_val_history": list(self.phase2_val_history),
            "phase2_best_epoch": self.phase2_best_epoch,
            "balanced_losses": list(self.balanced_losses),
            "backbone_checksum_before_phase1": self.backbone_checksum_before_phase1,
            "backbone_checksum_after_phase1": self.backbone_checksum_after_phase1,
            "teacher_checksum_before": self.teacher_checksum_before,
            "teacher_checksum_after": self.teacher_checksum_after,
            "teacher_width": self.teacher_width,
            "kd_compared_widths": sorted(set(self.kd_compared_widths)),
        }
        if include_timing:
            data["seconds"] = self.seconds
        return data


def initial_state(
    base_model: ModelState, store: ExemplarStore, train: Dataset
) -> IncrementalState:
    """Start from a single-head base model; the store is filled over its classes."""
    if len(base_model.heads) != 1:
        raise ValueError(
            f"Incremental learning needs a single-head model, got {len(base_model.heads)} heads"
        )
    student = base_model.copy()
    seen = list(student.heads[0].class_labels)
    filled = rebalance(store, seen, train, student)
    return IncrementalState(student=student, teacher=None, store=filled, seen_classes=seen)


class _StepLosses:
    """Builds the enabled CE/KD terms for a batch of corpus positions."""

    def __init__(
        self,
        switches: LossSwitches,
        targets: np.ndarray,
        is_old: np.ndarray,
        teacher_logits: Optional[np.ndarray],
        compared_widths: List[int],
    ) -> None:
        self.switches = switches
        self.targets = targets
        self.is_old = is_old
        self.teacher_logits = teacher_logits
        self.compared_widths = compared_widths

    def __call__(self, positions: np.ndarray) -> Dict[int, WeightedSum]:
        s = self.switches
        old = self.is_old[positions]
        targets = self.targets[positions]
        new_rows = np.flatnonzero(~old)
        old_rows = np.flatnonzero(old)
        terms = [
            CrossEntropyTerm(targets[new_rows], new_rows, s.effective_weight(CE_NEW)),
            CrossEntropyTerm(targets[old_rows], old_rows, s.effective_weight(CE_OLD)),
        ]
        if self.teacher_logits is not None:
            teacher = self.teacher_logits[positions]
            for rows, term in ((new_rows, KD_NEW), (old_rows, KD_OLD)):
                terms.append(
                    DistillationTerm(
                        teacher[rows],
                        temperature=s.temperature,
                        rows=rows,
                        weight=s.effective_weight(term),
                        compared_widths=self.compared_widths,
                    )
                )
        return {HEAD_ID: WeightedSum(terms)}


def _step_rng(cfg: StepConfig, step_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, step_index, stream])


def _train_phase(
    student: ModelState,
    features: np.ndarray,
    build_losses: _StepLosses,
    epochs: int,
    schedule: LrSchedule,
    freeze_scope: str,
    cfg: StepConfig,
    shuffle_rng: np.random.Generator,
    on_epoch=None,
) -> List[float]:
    mask = set_freeze(student, freeze_scope)
    optimizer_state = OptimizerState(momentum=cfg.momentum)
    losses = []
    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(features))
        stats = train_epoch(
            student,
            features,
            order,
            cfg.batch_size,
            build_losses,
            schedule.rate(epoch),
            mask,
            optimizer_state,
            dropout=cfg.dropout_in_finetune,
            update_running_stats=not mask.backbone_frozen,
        )
        losses.append(stats.mean_loss)
        logger.debug(
            f"Epoch {epoch} (freeze {freeze_scope}): loss={stats.mean_loss:.4f} lr={schedule.rate(epoch):.5f}"
        )
        if on_epoch is not None and on_epoch(epoch):
            break
    return losses


def run_step(
    state: IncrementalState,
    new_classes: Sequence[int],
    data: StepData,
    cfg: StepConfig,
) -> Tuple[IncrementalState, StepReport]:
    """Learn ``new_classes`` on top of ``state`` and fold them into the exemplar store."""
    start = time.perf_counter()
    new_classes = [int(c) for c in new_classes]
    step_index = state.step_index + 1
    switches = cfg.losses
    if not new_classes:
        raise ValueError("An incremental step needs at least one new class")
    overlap = set(new_classes) & set(state.seen_classes)
    if overlap:
        raise ValueError(f"Classes {sorted(overlap)} were already learned")
    if switches.uses_teacher and not state.seen_classes:
        raise ValueError("Knowledge distillation needs a teacher with learned classes")
    new_idx = data.train.indices_of(new_classes)
    if new_idx.size == 0:
        raise ValueError(f"No training samples for new classes {new_classes}")
    if switches.uses_exemplars and state.seen_classes and state.store.total() == 0:
        raise ValueError("Exemplar losses are enabled but the exemplar store is empty")

    teacher = state.student.copy()
    teacher_width = teacher.head(HEAD_ID).width
    report = StepReport(
        step_index=step_index,
        new_classes=new_classes,
        seen_classes=state.seen_classes + new_classes,
        corpus_size=0,
        exemplars_used=0,
        teacher_checksum_before=model_checksum(teacher),
        teacher_width=teacher_width,
    )

    student = state.student.copy()
    student.replace_head(
        expand_head(
            student.head(HEAD_ID),
            new_classes,
            cfg.init_scale,
            _step_rng(cfg, step_index, EXPAND_STREAM),
        )
    )
    head_labels = student.head(HEAD_ID).class_labels

    old_idx = state.store.indices() if switches.uses_exemplars else np.zeros(0, dtype=np.int64)
    corpus = np.concatenate([new_idx, old_idx]).astype(np.int64)
    is_old = np.concatenate([np.zeros(len(new_idx), bool), np.ones(len(old_idx), bool)])
    features = data.train.features[corpus]
    targets = local_labels(head_labels, data.train.labels[corpus])
    teacher_logits = predict_logits(teacher, features, HEAD_ID) if switches.uses_teacher else None
    report.corpus_size = len(corpus)
    report.exemplars_used = len(old_idx)
    build_losses = _StepLosses(switches, targets, is_old, teacher_logits, report.kd_compared_widths)
    shuffle_rng = _step_rng(cfg, step_index, SHUFFLE_STREAM)

    # Phase 1: backbone and its running statistics fixed, head learns at the large rate.
    report.backbone_checksum_before_phase1 = model_checksum(student, scope="backbone")
    report.phase1_losses = _train_phase(
        student,
        features,
        build_losses,
        cfg.phase1.epochs,
        cfg.phase1.lr_schedule(cfg.phase1.epochs),
        BACKBONE_ONLY,
        cfg,
        shuffle_rng,
    )
    report.backbone_checksum_after_phase1 = model_checksum(student, scope="backbone")

    # Phase 2: everything trainable, early stopping on all-seen validation accuracy.
    val = data.val.subset(data.val.indices_of(head_labels))
    monitor = val if len(val) else data.train.subset(data.train.indices_of(head_labels))
    stopper = EarlyStopping(cfg.phase2.patience)
    best: List[ModelState] = []

    def track(epoch: int) -> bool:
        score = accuracy(student, monitor, HEAD_ID)
        report.phase2_val_history.append(score)
        if stopper.update(epoch, score):
            best[:] = [student.copy()]
        return stopper.should_stop(epoch)

    _train_phase(
        student,
        features,
        build_losses,
        cfg.phase2.epochs_max,
        cfg.phase2.lr_schedule(cfg.phase2.epochs_max),
        NONE,
        cfg,
        shuffle_rng,
        on_epoch=track,
    )
    report.phase2_best_epoch = stopper.best_epoch
    if best:
        student.load_tensors(best[0])
    if stopper.best_epoch is not None and report.phase2_epochs_run < cfg.phase2.epochs_max:
        log_fn = logger.warning if stopper.best_epoch == 0 else logger.info
        log_fn(
            f"Step {step_index}: phase 2 stopped after {report.phase2_epochs_run} epochs, "
            f"best epoch {stopper.best_epoch}"
        )

    if cfg.balanced_finetune is not None and cfg.balanced_finetune.epochs > 0:
        report.balanced_losses = _balanced_finetune(
            student, teacher, state.store, data.train, new_classes, step_index, cfg
        )

    store = rebalance(state.store, report.seen_classes, data.train, student)
    report.teacher_checksum_after = model_checksum(teacher)
    report.seconds = time.perf_counter() - start
    logger.info(
        f"Step {step_index}: learned classes {new_classes}, head width {len(head_labels)}, "
        f"{store.total()} exemplars kept"
    )
    return (
        IncrementalState(
            student=student,
            teacher=teacher,
            store=store,
            seen_classes=report.seen_classes,
            step_index=step_index,
        ),
        report,
    )


def _balanced_finetune(
    student: ModelState,
    teacher: ModelState,
    store: ExemplarStore,
    train: Dataset,
    new_classes: List[int],
    step_index: int,
    cfg: StepConfig,
) -> List[float]:
    """Short CE+KD pass on a class-balanced subset of exemplars and new samples."""
    settings = cfg.balanced_finetune
    idx = build_balanced_set(store, train, new_classes, settings.per_class_m, cfg.seed, step_index)
    if idx.size == 0:
        return []
    features = train.features[idx]
    head_labels = student.head(HEAD_ID).class_labels
    is_old = ~np.isin(train.labels[idx], new_classes)
    switches = LossSwitches(
        ce_new=True, ce_old=True, kd_new=True, kd_old=True, temperature=cfg.losses.temperature
    )
    build_losses = _StepLosses(
        switches,
        local_labels(head_labels, train.labels[idx]),
        is_old,
        predict_logits(teacher, features, HEAD_ID),
        [],
    )
    return _train_phase(
        student,
        features,
        build_losses,
        settings.epochs,
        LrSchedule(kind="constant", lr0=settings.lr),
        NONE,
        cfg,
        _step_rng(cfg, step_index, BALANCED_STREAM),
    )


@dataclass
class StepResult:
    step: int
    classes: List[int]
    acc: float
    acc_old: Optional[float]
    acc_new: Optional[float]
    confusion: np.ndarray
    details: Optional[StepReport] = None

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def to_dict(self, include_timing: bool = False) -> Dict[str, Any]:
        return {
            "step": self.step,
            "n_classes": self.n_classes,
            "classes": list(self.classes),
            "acc": self.acc,
            "acc_old": self.acc_old,
            "acc_new": self.acc_new,
            "confusion": self.confusion.tolist(),
            "details": self.details.to_dict(include_timing) if self.details else None,
        }


@dataclass
class ExperimentReport:
    seed: int
    class_order: Dict[str, Any]
    steps: List[StepResult]
    avg_incremental_accuracy: Optional[float]
    config: Dict[str, Any] = field(default_factory=dict)
    timing: Dict[str, Any] = field(default_factory=dict)
    # Exemplar store after the last step; persisted next to the report.
    store: Optional[ExemplarStore] = None

    @property
    def step_accuracies(self) -> List[float]:
        return [s.acc for s in self.steps]

    def to_dict(self, include_timing: bool = False) -> Dict[str, Any]:
        data = {
            "seed": self.seed,
            "config": self.config,
            "class_order": self.class_order,
            "steps": [s.to_dict(include_timing) for s in self.steps],
            "avg_incremental_accuracy": self.avg_incremental_accuracy,
        }
        if include_timing:
            data["timing"] = self.timing
        return data

    def csv_rows(self) -> List[List[Any]]:
        return [[s.step, s.n_classes, s.acc, s.acc_old, s.acc_new] for s in self.steps]


STEP_CSV_HEADER = ["step", "n_classes", "acc", "acc_old", "acc_new"]


def evaluate_step(
    model: ModelState,
    test: Dataset,
    step: int,
    old_classes: Sequence[int],
    new_classes: Sequence[int],
) -> StepResult:
    """Test accuracy over all seen classes; confusion is over head-local indices."""
    head = model.head(HEAD_ID)
    idx = test.indices_of(head.class_labels)
    if idx.size == 0:
        raise ValueError(f"No test samples for classes {head.class_labels}")
    logits = predict_logits(model, test.features[idx], HEAD_ID)
    preds = np.argmax(logits, axis=1)
    truth = local_labels(head.class_labels, test.labels[idx])
    cm = confusion(preds, truth, head.width)
    position = head.local_index()

    def group(classes: Sequence[int]) -> Optional[float]:
        rows = [position[c] for c in classes]
        if not rows or cm[rows].sum() == 0:
            return None
        return group_accuracy(cm, rows)

    return StepResult(
        step=step,
        classes=list(head.class_labels),
        acc=overall_accuracy(cm),
        acc_old=group(old_classes) if step > 0 else None,
        acc_new=group(new_classes) if step > 0 else None,
        confusion=cm,
    )


def run_experiment(
    base_model: ModelState,
    schedule: ClassSchedule,
    train: Dataset,
    val: Dataset,
    test: Dataset,
    cfg: StepConfig,
    store: ExemplarStore,
    config_echo: Optional[Dict[str, Any]] = None,
) -> ExperimentReport:
    """Run every incremental step of ``schedule`` and evaluate after each one."""
    start = time.perf_counter()
    if sum(schedule.step_sizes) > train.num_classes:
        raise ValueError(
            f"Schedule {schedule.text()} needs {sum(schedule.step_sizes)} classes, "
            f"dataset has {train.num_classes}"
        )
    head_classes = set(base_model.head(HEAD_ID).class_labels)
    if head_classes != set(schedule.base_classes):
        raise ValueError(
            f"Base model classes {sorted(head_classes)} differ from schedule base "
            f"classes {sorted(schedule.base_classes)}"
        )
    missing = [c for step in schedule.class_assignment for c in step if not np.any(train.labels == c)]
    if missing:
        raise ValueError(f"Scheduled classes {missing} have no training samples")

    state = initial_state(base_model, store, train)
    results = [evaluate_step(state.student, test, 0, [], state.seen_classes)]
    step_seconds = []
    logger.info(f"Base step: {len(state.seen_classes)} classes, test acc {results[0].acc:.4f}")

    for step, new_classes in enumerate(schedule.class_assignment[1:], start=1):
        old_classes = list(state.seen_classes)
        state, step_report = run_step(state, new_classes, StepData(train, val), cfg)
        result = evaluate_step(state.student, test, step, old_classes, new_classes)
        result.details = step_report
        results.append(result)
        step_seconds.append(step_report.seconds)
        logger.info(
            f"Step {step}: {result.n_classes} classes, acc={result.acc:.4f} "
            f"old={result.acc_old} new={result.acc_new}"
        )

    avg = maybe_avg_incremental_accuracy([r.acc for r in results])
    return ExperimentReport(
        seed=cfg.seed,
        class_order=schedule.to_dict(),
        steps=results,
        avg_incremental_accuracy=avg,
        config=dict(config_echo or {}),
        timing={"step_seconds": step_seconds, "total_seconds": time.perf_counter() - start},
        store=state.store,
    )
