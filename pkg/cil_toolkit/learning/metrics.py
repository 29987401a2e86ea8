"""Confusion matrices, group accuracies and average incremental accuracy."""

import logging
from typing import Iterable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MICRO = "micro"
MACRO = "macro"


def confusion(preds: Sequence[int], labels: Sequence[int], num_classes: int) -> np.ndarray:
    """``counts[true][pred]`` over ``num_classes`` classes."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError(f"{len(preds)} predictions for {len(labels)} labels")
    for name, values in (("prediction", preds), ("label", labels)):
        if values.size and (values.min() < 0 or values.max() >= num_classes):
            raise ValueError(f"{name} out of range [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def overall_accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    if total == 0:
        raise ValueError("Confusion matrix is empty")
    return float(np.trace(cm) / total)


def group_accuracy(cm: np.ndarray, group: Iterable[int], average: str = MICRO) -> float:
    """Accuracy over the rows of ``group``; micro pools samples, macro averages classes."""
    rows = np.asarray(sorted(set(int(c) for c in group)), dtype=np.int64)
    if rows.size == 0:
        raise ValueError("Group must be nonempty")
    correct = cm[rows, rows].astype(np.float64)
    counts = cm[rows].sum(axis=1).astype(np.float64)
    if counts.sum() == 0:
        raise ValueError(f"No samples for group {rows.tolist()}")
    if average == MICRO:
        return float(correct.sum() / counts.sum())
    if average == MACRO:
        present = counts > 0
        return float(np.mean(correct[present] / counts[present]))
    raise ValueError(f"Unknown averaging: {average}")


def avg_incremental_accuracy(
    step_accuracies: Sequence[float], include_base: bool = False
) -> float:
    """Mean of per-step accuracies; the base step is excluded by default."""
    values = list(step_accuracies) if include_base else list(step_accuracies)[1:]
    if not values:
        raise ValueError("No incremental steps to average")
    return float(np.mean(values))


def maybe_avg_incremental_accuracy(
    step_accuracies: Sequence[float], include_base: bool = False
) -> Optional[float]:
    if len(step_accuracies) < 2 and not include_base:
        return None
    return avg_incremental_accuracy(step_accuracies, include_base)
