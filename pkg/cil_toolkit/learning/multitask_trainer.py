"""Base-stage training of one shared backbone with a head per planned task."""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from cil_toolkit.core.losses import CrossEntropyTerm
from cil_toolkit.core.model import BackboneSpec, ModelState, build_model
from cil_toolkit.core.optim import DEFAULT_MOMENTUM, EarlyStopping, LrSchedule, OptimizerState
from cil_toolkit.core.tensor import DEFAULT_DTYPE
from cil_toolkit.data.dataset import Dataset

from .loops import accuracy, local_labels, train_epoch
from .task_factory import TaskPlan, plan_from_label_lists

logger = logging.getLogger(__name__)

SHUFFLE_STREAM = 1


@dataclass
class BaseTrainConfig:
    epochs_max: int = 30
    batch_size: int = 32
    lr_schedule: Optional[LrSchedule] = None
    early_stop_patience: int = 10
    seed: int = 0
    momentum: float = DEFAULT_MOMENTUM
    head_weights: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lr_schedule is None:
            self.lr_schedule = LrSchedule(kind="cosine", lr0=0.01, total_epochs=self.epochs_max)
        self.validate()

    def validate(self) -> None:
        for name in ("epochs_max", "batch_size", "early_stop_patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if (
            self.lr_schedule.kind == "cosine"
            and self.lr_schedule.total_epochs < self.epochs_max
        ):
            raise ValueError("Cosine schedule must span at least epochs_max epochs")

    def head_weight(self, task_id: int) -> float:
        return float(self.head_weights.get(task_id, 1.0))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epochs_max": self.epochs_max,
            "batch_size": self.batch_size,
            "lr_schedule": self.lr_schedule.to_dict(),
            "early_stop_patience": self.early_stop_patience,
            "seed": self.seed,
            "momentum": self.momentum,
            "head_weights": {str(k): v for k, v in sorted(self.head_weights.items())},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BaseTrainConfig":
        epochs_max = int(data.get("epochs_max", 30))
        schedule = data.get("lr_schedule")
        return cls(
            epochs_max=epochs_max,
            batch_size=int(data.get("batch_size", 32)),
            lr_schedule=LrSchedule.from_dict(
                {"total_epochs": epochs_max, **schedule}
            ) if schedule else None,
            early_stop_patience=int(data.get("early_stop_patience", 10)),
            seed=int(data.get("seed", 0)),
            momentum=float(data.get("momentum", DEFAULT_MOMENTUM)),
            head_weights={int(k): float(v) for k, v in data.get("head_weights", {}).items()},
        )


@dataclass
class EpochRecord:
    epoch: int
    head_losses: Dict[int, float]
    val_acc: float
    seconds: float
    lr: float


@dataclass
class TrainLog:
    head_ids: List[int]
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    stopped_early: bool = False

    @property
    def best_val_acc(self) -> Optional[float]:
        if self.best_epoch is None:
            return None
        return self.epochs[self.best_epoch].val_acc

    @property
    def mean_epoch_seconds(self) -> float:
        if not self.epochs:
            return 0.0
        return float(np.mean([r.seconds for r in self.epochs]))

    def csv_header(self) -> List[str]:
        return ["epoch"] + [f"loss_head_{h}" for h in self.head_ids] + ["val_acc", "seconds", "lr"]

    def to_csv_rows(self) -> List[List[Any]]:
        rows = []
        for record in self.epochs:
            losses = [record.head_losses.get(h, "") for h in self.head_ids]
            rows.append([record.epoch] + losses + [record.val_acc, record.seconds, record.lr])
        return rows


def _check_plan_coverage(plan: TaskPlan, train: Dataset) -> None:
    present = set(np.unique(train.labels).tolist())
    for task in plan.tasks:
        missing = sorted(set(task.class_labels) - present)
        if missing:
            raise ValueError(f"Task {task.task_id} classes {missing} have no training samples")


def _fit(
    model: ModelState,
    plan: TaskPlan,
    train: Dataset,
    val: Dataset,
    cfg: BaseTrainConfig,
) -> Tuple[ModelState, TrainLog]:
    head_ids = [task.task_id for task in plan.tasks]
    local = {task.task_id: local_labels(task.class_labels, train.labels) for task in plan.tasks}
    monitor = val
    if len(val.indices_of(plan.base_classes)) == 0:
        logger.warning("Validation split is empty, monitoring training accuracy instead")
        monitor = train

    def build_losses(positions: np.ndarray) -> Dict[int, CrossEntropyTerm]:
        terms = {}
        for head_id in head_ids:
            batch_local = local[head_id][positions]
            rows = np.flatnonzero(batch_local >= 0)
            terms[head_id] = CrossEntropyTerm(
                labels=batch_local[rows], rows=rows, weight=cfg.head_weight(head_id)
            )
        return terms

    shuffle_rng = np.random.default_rng([cfg.seed, SHUFFLE_STREAM])
    optimizer_state = OptimizerState(momentum=cfg.momentum)
    stopper = EarlyStopping(cfg.early_stop_patience)
    log = TrainLog(head_ids=head_ids)
    best: Optional[ModelState] = None

    for epoch in range(cfg.epochs_max):
        start = time.perf_counter()
        lr = cfg.lr_schedule.rate(epoch)
        order = shuffle_rng.permutation(len(train))
        stats = train_epoch(
            model, train.features, order, cfg.batch_size, build_losses, lr, None, optimizer_state
        )
        for head_id in head_ids:
            if head_id not in stats.head_losses and cfg.head_weight(head_id) != 0:
                raise ValueError(f"Head {head_id} saw no samples during epoch {epoch}")
        val_acc = accuracy(model, monitor, head_id=0)
        log.epochs.append(
            EpochRecord(epoch, stats.head_losses, val_acc, time.perf_counter() - start, lr)
        )
        logger.debug(f"Epoch {epoch}: loss={stats.mean_loss:.4f} val_acc={val_acc:.4f} lr={lr:.5f}")
        if stopper.update(epoch, val_acc):
            best = model.copy()
        if stopper.should_stop(epoch):
            log.stopped_early = True
            log_fn = logger.warning if stopper.best_epoch == 0 else logger.info
            log_fn(f"Early stopping at epoch {epoch}, best epoch {stopper.best_epoch}")
            break

    log.best_epoch = stopper.best_epoch
    if best is not None:
        model.load_tensors(best)
    logger.info(
        f"Base training finished: {len(log.epochs)} epochs, best val_acc={log.best_val_acc} "
        f"at epoch {log.best_epoch}, {log.mean_epoch_seconds:.3f}s/epoch"
    )
    return model, log


def train_base(
    spec: BackboneSpec,
    plan: TaskPlan,
    train: Dataset,
    val: Dataset,
    cfg: BaseTrainConfig,
    dtype: np.dtype = DEFAULT_DTYPE,
) -> Tuple[ModelState, TrainLog]:
    """Train every head of ``plan`` concurrently on one shuffled stream.

    Each batch is routed to every head: samples outside a head's classes are
    dropped for that head and the rest are remapped to head-local indices.
    The per-head cross-entropies are summed and one SGD step updates the
    backbone and all heads. The returned model is restored to the epoch with
    the best full-set head accuracy on ``val``.
    """
    train = train.subset(train.indices_of(plan.base_classes))
    val = val.subset(val.indices_of(plan.base_classes))
    _check_plan_coverage(plan, train)
    model = build_model(spec, plan.head_specs(), cfg.seed, dtype)
    logger.info(f"Training base model with {len(plan.tasks)} heads of sizes {plan.sizes}")
    return _fit(model, plan, train, val, cfg)


def train_single_task(
    spec: BackboneSpec,
    train: Dataset,
    val: Dataset,
    cfg: BaseTrainConfig,
    class_labels: Optional[Sequence[int]] = None,
    dtype: np.dtype = DEFAULT_DTYPE,
) -> Tuple[ModelState, TrainLog]:
    """Conventional supervised training of a single head over ``class_labels``."""
    labels = (
        [int(c) for c in class_labels]
        if class_labels is not None
        else np.unique(train.labels).tolist()
    )
    train = train.subset(train.indices_of(labels))
    val = val.subset(val.indices_of(labels))
    plan = plan_from_label_lists([labels], labels, seed=cfg.seed)
    model = build_model(spec, [(0, labels)], cfg.seed, dtype)
    target = local_labels(labels, train.labels)
    monitor = val if len(val) else train

    shuffle_rng = np.random.default_rng([cfg.seed, SHUFFLE_STREAM])
    optimizer_state = OptimizerState(momentum=cfg.momentum)
    stopper = EarlyStopping(cfg.early_stop_patience)
    log = TrainLog(head_ids=[0])
    best: Optional[ModelState] = None

    def build_losses(positions: np.ndarray) -> Dict[int, CrossEntropyTerm]:
        return {
            0: CrossEntropyTerm(
                labels=target[positions],
                rows=np.arange(len(positions)),
                weight=cfg.head_weight(0),
            )
        }

    for epoch in range(cfg.epochs_max):
        start = time.perf_counter()
        lr = cfg.lr_schedule.rate(epoch)
        order = shuffle_rng.permutation(len(train))
        stats = train_epoch(
            model, train.features, order, cfg.batch_size, build_losses, lr, None, optimizer_state
        )
        val_acc = accuracy(model, monitor, head_id=0)
        log.epochs.append(
            EpochRecord(epoch, stats.head_losses, val_acc, time.perf_counter() - start, lr)
        )
        if stopper.update(epoch, val_acc):
            best = model.copy()
        if stopper.should_stop(epoch):
            log.stopped_early = True
            break

    log.best_epoch = stopper.best_epoch
    if best is not None:
        model.load_tensors(best)
    logger.info(f"Single-task training over {len(plan.base_classes)} classes: best epoch {log.best_epoch}")
    return model, log


def extract_for_incremental(model: ModelState, plan: TaskPlan) -> ModelState:
    """Backbone plus the full-set head only; the backbone tensors are copied unchanged."""
    model_heads = [(h.task_id, list(h.class_labels)) for h in model.heads]
    if model_heads != plan.head_specs():
        raise ValueError(
            f"Model heads {[h for h, _ in model_heads]} do not match the task plan"
        )
    return model.with_heads([model.head(plan.tasks[0].task_id)])
