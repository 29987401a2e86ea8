import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional

import numpy as np

from .model import BACKBONE_PREFIX, ModelState
from .tensor import ShapeError, Tensor

logger = logging.getLogger(__name__)

DEFAULT_MOMENTUM = 0.9

BACKBONE_ONLY = "backbone_only"
NONE = "none"


def cosine_lr(epoch: int, total_epochs: int, lr0: float) -> float:
    """Half-cosine decay from ``lr0`` at epoch 0 to 0 at ``total_epochs``."""
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    if epoch < 0 or epoch > total_epochs:
        raise ValueError(f"Epoch {epoch} outside [0, {total_epochs}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


@dataclass
class LrSchedule:
    """Constant or cosine-annealed learning rate."""

    kind: str = "constant"
    lr0: float = 0.01
    total_epochs: Optional[int] = None

    def __post_init__(self) -> None:
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.kind not in ("constant", "cosine"):
            raise ValueError(f"Unknown learning-rate schedule: {self.kind}")
        if self.kind == "cosine" and (self.total_epochs is None or self.total_epochs <= 0):
            raise ValueError("Cosine schedule needs positive total_epochs")

    def rate(self, epoch: int) -> float:
        if self.kind == "constant":
            return self.lr0
        return cosine_lr(epoch, self.total_epochs, self.lr0)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "lr0": self.lr0, "total_epochs": self.total_epochs}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LrSchedule":
        return cls(
            kind=data.get("kind", "constant"),
            lr0=float(data.get("lr0", 0.01)),
            total_epochs=data.get("total_epochs"),
        )


@dataclass
class FreezeMask:
    """Per-parameter flag: True means excluded from updates."""

    frozen: Dict[str, bool] = field(default_factory=dict)

    def is_frozen(self, name: str) -> bool:
        return self.frozen.get(name, False)

    @property
    def backbone_frozen(self) -> bool:
        names = [n for n in self.frozen if n.startswith(BACKBONE_PREFIX)]
        return bool(names) and all(self.frozen[n] for n in names)

    def trainable(self) -> List[str]:
        return [name for name, flag in self.frozen.items() if not flag]


def set_freeze(model: ModelState, scope: str) -> FreezeMask:
    """``backbone_only`` freezes every backbone tensor; ``none`` frees everything.

    Batch-norm running statistics follow the backbone: training loops stop
    updating them while the backbone is frozen.
    """
    if scope not in (BACKBONE_ONLY, NONE):
        raise ValueError(f"Unknown freeze scope: {scope}")
    return FreezeMask(
        frozen={
            name: scope == BACKBONE_ONLY and name.startswith(BACKBONE_PREFIX)
            for name, _ in model.named_parameters()
        }
    )


@dataclass
class OptimizerState:
    momentum: float = DEFAULT_MOMENTUM
    velocity: Dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


def sgd_step(
    model: ModelState,
    gradients: Mapping[str, Tensor],
    lr: float,
    freeze_mask: Optional[FreezeMask],
    optimizer_state: OptimizerState,
) -> ModelState:
    """In-place momentum SGD: ``v <- m*v + g; p <- p - lr*v`` for unfrozen tensors."""
    if lr <= 0:
        raise ValueError(f"Learning rate must be positive, got {lr}")
    mask = freeze_mask or FreezeMask()
    for name, param in model.named_parameters():
        if mask.is_frozen(name) or name not in gradients:
            continue
        grad = gradients[name]
        if grad.shape != param.shape:
            raise ShapeError(
                f"Gradient for {name} has shape {grad.shape}, parameter has {param.shape}"
            )
        velocity = optimizer_state.velocity.get(name)
        if velocity is None or velocity.shape != param.shape:
            velocity = np.zeros_like(param)
        velocity = optimizer_state.momentum * velocity + grad
        optimizer_state.velocity[name] = velocity.astype(param.dtype, copy=False)
        param -= (lr * velocity).astype(param.dtype, copy=False)
    return model


class EarlyStopping:
    """Tracks the best validation score and signals when patience runs out."""

    def __init__(self, patience: int) -> None:
        if patience < 0:
            raise ValueError("patience must be nonnegative")
        self.patience = patience
        self.best_score: Optional[float] = None
        self.best_epoch: Optional[int] = None
        self.history: List[float] = []

    def update(self, epoch: int, score: float) -> bool:
        """Record a score; returns True when it is a new best."""
        self.history.append(score)
        if self.best_score is None or score > self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            return True
        return False

    def should_stop(self, epoch: int) -> bool:
        return self.best_epoch is not None and epoch - self.best_epoch >= self.patience
