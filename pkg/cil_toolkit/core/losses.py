"""Cross-entropy and knowledge-distillation losses with analytic gradients."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .tensor import ShapeError, Tensor, check_finite

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 2.0


def log_softmax(logits: Tensor) -> Tensor:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: Tensor) -> Tensor:
    return np.exp(log_softmax(logits))


def _check_labels(logits: Tensor, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"Logits {logits.shape} and labels {labels.shape} do not line up"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(
            f"Label out of range [0, {logits.shape[1]}): {labels.min()}..{labels.max()}"
        )
    return labels


def cross_entropy_with_grad(logits: Tensor, labels: np.ndarray) -> Tuple[float, Tensor]:
    labels = _check_labels(logits, labels)
    n = logits.shape[0]
    if n == 0:
        raise ValueError("Cross entropy needs a nonempty batch")
    log_probs = log_softmax(logits)
    rows = np.arange(n)
    value = float(-log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    grad /= n
    return max(value, 0.0), grad


def cross_entropy(logits: Tensor, labels: np.ndarray) -> float:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    return cross_entropy_with_grad(logits, labels)[0]


def kd_loss_with_grad(
    student_logits: Tensor, teacher_logits: Tensor, temperature: float
) -> Tuple[float, Tensor]:
    if temperature <= 0:
        raise ValueError(f"Temperature must be positive, got {temperature}")
    if student_logits.shape != teacher_logits.shape:
        raise ShapeError(
            f"Student {student_logits.shape} and teacher {teacher_logits.shape} widths differ"
        )
    n = student_logits.shape[0]
    if n == 0:
        raise ValueError("Distillation needs a nonempty batch")
    log_p = log_softmax(teacher_logits / temperature)
    log_q = log_softmax(student_logits / temperature)
    p = np.exp(log_p)
    kl = (p * (log_p - log_q)).sum(axis=1).mean()
    value = float(temperature**2 * kl)
    grad = (temperature / n) * (np.exp(log_q) - p)
    return max(value, 0.0), grad.astype(student_logits.dtype, copy=False)


def kd_loss(student_logits: Tensor, teacher_logits: Tensor, temperature: float) -> float:
    """``T^2 * KL(softmax(teacher/T) || softmax(student/T))``, mean over the batch."""
    return kd_loss_with_grad(student_logits, teacher_logits, temperature)[0]


@dataclass
class CrossEntropyTerm:
    """CE over a row selection of the logits; an empty selection contributes nothing."""

    labels: np.ndarray
    rows: Optional[np.ndarray] = None
    weight: float = 1.0

    def is_empty(self) -> bool:
        return self.weight == 0 or len(self.labels) == 0

    def value_and_grad(self, logits: Tensor) -> Tuple[float, Tensor]:
        grad = np.zeros_like(logits)
        if self.is_empty():
            return 0.0, grad
        rows = _rows(self.rows, logits.shape[0])
        value, row_grad = cross_entropy_with_grad(logits[rows], self.labels)
        grad[rows] = row_grad * self.weight
        return self.weight * value, grad


@dataclass
class DistillationTerm:
    """KD over a row selection, restricted to the columns the teacher knows."""

    teacher_logits: Tensor
    temperature: float = DEFAULT_TEMPERATURE
    rows: Optional[np.ndarray] = None
    weight: float = 1.0
    compared_widths: List[int] = field(default_factory=list)

    @property
    def teacher_width(self) -> int:
        return self.teacher_logits.shape[1]

    def is_empty(self) -> bool:
        return self.weight == 0 or len(self.teacher_logits) == 0

    def value_and_grad(self, logits: Tensor) -> Tuple[float, Tensor]:
        grad = np.zeros_like(logits)
        if self.is_empty():
            return 0.0, grad
        width = self.teacher_width
        if logits.shape[1] < width:
            raise ShapeError(
                f"Student width {logits.shape[1]} is smaller than teacher width {width}"
            )
        rows = _rows(self.rows, logits.shape[0])
        student = logits[rows, :width]
        self.compared_widths.append(student.shape[1])
        value, col_grad = kd_loss_with_grad(
            student, self.teacher_logits.astype(logits.dtype, copy=False), self.temperature
        )
        grad[rows, :width] = col_grad * self.weight
        return self.weight * value, grad


@dataclass
class WeightedSum:
    terms: List = field(default_factory=list)

    def value_and_grad(self, logits: Tensor) -> Tuple[float, Tensor]:
        total = 0.0
        grad = np.zeros_like(logits)
        for term in self.terms:
            if term.is_empty():
                continue
            value, term_grad = term.value_and_grad(logits)
            total += value
            grad += term_grad
        check_finite(np.asarray(total), "loss")
        return total, grad

    def is_empty(self) -> bool:
        return all(term.is_empty() for term in self.terms)


def _rows(rows: Optional[Sequence[int]], n: int) -> np.ndarray:
    if rows is None:
        return np.arange(n)
    return np.asarray(rows, dtype=np.int64)
