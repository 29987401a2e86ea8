"""Mini-batch epoch loop and accuracy evaluation shared by the trainers."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, Mapping, Optional, Sequence

import numpy as np

from cil_toolkit.core.gradients import compute_gradients
from cil_toolkit.core.layers import TRAIN
from cil_toolkit.core.model import ModelState, predict_labels
from cil_toolkit.core.optim import FreezeMask, OptimizerState, sgd_step
from cil_toolkit.core.tensor import Tensor
from cil_toolkit.data.dataset import Dataset

logger = logging.getLogger(__name__)

# Maps the corpus positions of one batch to the loss term of every trained head.
LossBuilder = Callable[[np.ndarray], Mapping[int, object]]


@dataclass
class EpochStats:
    mean_loss: float
    head_losses: Dict[int, float] = field(default_factory=dict)
    batches: int = 0


def iter_batches(order: np.ndarray, batch_size: int) -> Iterator[np.ndarray]:
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def train_epoch(
    model: ModelState,
    features: Tensor,
    order: np.ndarray,
    batch_size: int,
    build_losses: LossBuilder,
    lr: float,
    freeze_mask: Optional[FreezeMask],
    optimizer_state: OptimizerState,
    dropout: bool = True,
    update_running_stats: bool = True,
) -> EpochStats:
    """One pass over ``features[order]``; one SGD step per batch.

    Per-head losses are averaged over the batches in which the head's term
    was nonempty.
    """
    total = 0.0
    sums: Dict[int, float] = {}
    counts: Dict[int, int] = {}
    batches = 0
    for positions in iter_batches(order, batch_size):
        head_losses = build_losses(positions)
        values: Dict[int, float] = {}
        loss, grads = compute_gradients(
            model,
            features[positions],
            head_losses,
            mode=TRAIN,
            freeze_mask=freeze_mask,
            dropout=dropout,
            update_running_stats=update_running_stats,
            head_values=values,
        )
        sgd_step(model, grads, lr, freeze_mask, optimizer_state)
        total += loss
        batches += 1
        for head_id, term in head_losses.items():
            if term.is_empty():
                continue
            sums[head_id] = sums.get(head_id, 0.0) + values[head_id]
            counts[head_id] = counts.get(head_id, 0) + 1
    return EpochStats(
        mean_loss=total / batches if batches else 0.0,
        head_losses={h: sums[h] / counts[h] for h in sums},
        batches=batches,
    )


def accuracy(
    model: ModelState,
    ds: Dataset,
    head_id: int = 0,
    classes: Optional[Sequence[int]] = None,
) -> float:
    """Top-1 accuracy of a head over the samples of ``classes`` (default: its own)."""
    head = model.head(head_id)
    wanted = head.class_labels if classes is None else classes
    idx = ds.indices_of(wanted)
    if idx.size == 0:
        raise ValueError(f"No evaluation samples for classes {list(wanted)}")
    preds = predict_labels(model, ds.features[idx], head_id)
    return float(np.mean(preds == ds.labels[idx]))


def local_labels(class_labels: Sequence[int], labels: np.ndarray) -> np.ndarray:
    """Global labels mapped to positions within ``class_labels``; -1 when absent."""
    lookup = {int(c): i for i, c in enumerate(class_labels)}
    return np.fromiter((lookup.get(int(l), -1) for l in labels), dtype=np.int64, count=len(labels))
