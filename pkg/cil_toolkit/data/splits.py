"""Stratified splitting and class schedules."""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Tuple

import numpy as np

from .dataset import Dataset

logger = logging.getLogger(__name__)

SEEDED_ORDER = "seeded"
LABEL_ORDER = "label"


@dataclass
class SplitSpec:
    train: float = 0.7
    test: float = 0.2
    val: float = 0.1

    def __post_init__(self) -> None:
        fractions = (self.train, self.test, self.val)
        if any(f < 0 for f in fractions):
            raise ValueError(f"Split fractions must be nonnegative: {fractions}")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ValueError(f"Split fractions must sum to 1: {fractions}")

    def to_dict(self) -> Dict[str, float]:
        return {"train": self.train, "test": self.test, "val": self.val}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SplitSpec":
        return cls(
            train=float(data.get("train", 0.7)),
            test=float(data.get("test", 0.2)),
            val=float(data.get("val", 0.1)),
        )


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def split_indices(
    labels: np.ndarray, spec: SplitSpec, seed: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class seeded shuffle, then contiguous cuts at the rounded fractions."""
    all_positive = min(spec.train, spec.test, spec.val) > 0
    parts: Tuple[List[np.ndarray], List[np.ndarray], List[np.ndarray]] = ([], [], [])
    for label in np.unique(labels):
        idx = np.flatnonzero(labels == label)
        n = len(idx)
        if all_positive and n < 3:
            raise ValueError(f"Class {label} has {n} samples; 3 are needed for a 3-way split")
        shuffled = idx[np.random.default_rng([seed, int(label)]).permutation(n)]
        cut_train = _round_half_up(n * spec.train)
        cut_test = _round_half_up(n * (spec.train + spec.test))
        if cut_train == 0:
            raise ValueError(f"Class {label} would receive no training samples")
        parts[0].append(shuffled[:cut_train])
        parts[1].append(shuffled[cut_train:cut_test])
        parts[2].append(shuffled[cut_test:])
    return tuple(
        np.sort(np.concatenate(p)) if p else np.zeros(0, dtype=np.int64) for p in parts
    )


def stratified_split(
    ds: Dataset, spec: SplitSpec, seed: int
) -> Tuple[Dataset, Dataset, Dataset]:
    train_idx, test_idx, val_idx = split_indices(ds.labels, spec, seed)
    logger.info(
        f"Split {len(ds)} samples into train={len(train_idx)} test={len(test_idx)} val={len(val_idx)}"
    )
    return ds.subset(train_idx), ds.subset(test_idx), ds.subset(val_idx)


@dataclass
class ClassSchedule:
    """Class counts per step and the labels assigned to each step."""

    step_sizes: List[int]
    class_assignment: List[List[int]]
    seed: int
    order: str = SEEDED_ORDER
    permutation: List[int] = field(default_factory=list)

    @property
    def base_classes(self) -> List[int]:
        return list(self.class_assignment[0])

    @property
    def num_steps(self) -> int:
        return len(self.step_sizes)

    def seen_after(self, step: int) -> List[int]:
        return [c for labels in self.class_assignment[: step + 1] for c in labels]

    def text(self) -> str:
        return "-".join(str(s) for s in self.step_sizes)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schedule": self.text(),
            "step_sizes": list(self.step_sizes),
            "class_assignment": [list(a) for a in self.class_assignment],
            "seed": self.seed,
            "order": self.order,
            "permutation": list(self.permutation),
        }


def parse_schedule(
    text: str, num_classes: int, seed: int, order: str = SEEDED_ORDER
) -> ClassSchedule:
    """Parse ``"4-2-2-2"`` and assign labels from a seeded permutation of [0, C)."""
    sizes = []
    for token in str(text).strip().split("-"):
        try:
            size = int(token)
        except ValueError:
            raise ValueError(f"Malformed schedule token '{token}' in '{text}'") from None
        if size <= 0:
            raise ValueError(f"Schedule steps must be positive: '{text}'")
        sizes.append(size)
    if sum(sizes) > num_classes:
        raise ValueError(
            f"Schedule '{text}' needs {sum(sizes)} classes, dataset has {num_classes}"
        )

    if order == SEEDED_ORDER:
        permutation = np.random.default_rng(seed).permutation(num_classes).tolist()
    elif order == LABEL_ORDER:
        permutation = list(range(num_classes))
    else:
        raise ValueError(f"Unknown class order: {order}")

    assignment = []
    start = 0
    for size in sizes:
        assignment.append([int(c) for c in permutation[start : start + size]])
        start += size
    return ClassSchedule(
        step_sizes=sizes,
        class_assignment=assignment,
        seed=seed,
        order=order,
        permutation=[int(c) for c in permutation],
    )
