"""Multitask plans: class subsets trained as concurrent heads on one backbone."""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Set, Tuple

import numpy as np

logger = logging.getLogger(__name__)

MIN_TASK_SIZE = 2
MAX_BASE_CLASSES = 62
# Below this many candidate subsets, sample from the explicit list of unused ones.
ENUMERATION_LIMIT = 4096


@dataclass
class TaskSpec:
    task_id: int
    class_labels: Tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.class_labels)


@dataclass
class TaskPlan:
    tasks: List[TaskSpec]
    base_classes: Tuple[int, ...]
    seed: int
    nested: bool = False

    def __post_init__(self) -> None:
        self.base_classes = tuple(int(c) for c in self.base_classes)
        self.validate()

    def validate(self) -> None:
        if not self.tasks:
            raise ValueError("A task plan needs at least one task")
        if tuple(self.tasks[0].class_labels) != self.base_classes:
            raise ValueError("The first task must cover the full base class set")
        base = set(self.base_classes)
        seen: Set[frozenset] = set()
        for task in self.tasks:
            labels = frozenset(task.class_labels)
            if len(labels) != len(task.class_labels):
                raise ValueError(f"Task {task.task_id} repeats a class")
            if len(labels) < MIN_TASK_SIZE:
                raise ValueError(f"Task {task.task_id} has fewer than {MIN_TASK_SIZE} classes")
            if not labels <= base:
                raise ValueError(f"Task {task.task_id} uses classes outside the base set")
            if labels in seen:
                raise ValueError(f"Task {task.task_id} duplicates an earlier task")
            seen.add(labels)

    @property
    def sizes(self) -> List[int]:
        return [task.size for task in self.tasks]

    def head_specs(self) -> List[Tuple[int, List[int]]]:
        return [(task.task_id, list(task.class_labels)) for task in self.tasks]

    def to_label_lists(self) -> List[List[int]]:
        return [list(task.class_labels) for task in self.tasks]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tasks": self.to_label_lists(),
            "base_classes": list(self.base_classes),
            "seed": self.seed,
            "nested": self.nested,
        }


def enumerate_task_count(n: int) -> int:
    """Number of distinct nonempty class subsets, ``2^N - 1``."""
    if n < 1:
        raise ValueError("N must be at least 1")
    if n > MAX_BASE_CLASSES:
        raise OverflowError(f"N={n} exceeds the supported maximum of {MAX_BASE_CLASSES}")
    return (1 << n) - 1


def _sample_subset(
    pool: Sequence[int],
    size: int,
    used: Set[frozenset],
    rng: np.random.Generator,
) -> Tuple[int, ...]:
    """Uniform draw among the ``size``-subsets of ``pool`` not yet in ``used``."""
    if size > len(pool):
        raise ValueError(f"Task size {size} exceeds the {len(pool)} available classes")
    total = math.comb(len(pool), size)
    taken = sum(1 for s in used if len(s) == size and s <= set(pool))
    if total - taken <= 0:
        raise ValueError(
            f"No distinct {size}-class subsets left among {len(pool)} classes"
        )
    if total <= ENUMERATION_LIMIT:
        candidates = [
            c for c in itertools.combinations(sorted(pool), size) if frozenset(c) not in used
        ]
        return candidates[int(rng.integers(len(candidates)))]
    while True:
        subset = tuple(sorted(int(c) for c in rng.choice(pool, size=size, replace=False)))
        if frozenset(subset) not in used:
            return subset


def _full_task(base_classes: Sequence[int]) -> TaskSpec:
    return TaskSpec(task_id=0, class_labels=tuple(int(c) for c in base_classes))


def make_decreasing_plan(
    base_classes: Sequence[int],
    sizes: Sequence[int],
    seed: int,
    nested: bool = False,
) -> TaskPlan:
    """Full set first, then one seeded subset per further size (e.g. [5,4,3,2])."""
    sizes = [int(s) for s in sizes]
    if not sizes or sizes[0] != len(base_classes):
        raise ValueError(
            f"First size must equal the {len(base_classes)} base classes, got {sizes}"
        )
    if any(b > a for a, b in zip(sizes, sizes[1:])):
        raise ValueError(f"Sizes must be non-increasing: {sizes}")
    if any(s < MIN_TASK_SIZE for s in sizes):
        raise ValueError(f"Every task needs at least {MIN_TASK_SIZE} classes: {sizes}")

    rng = np.random.default_rng(seed)
    tasks = [_full_task(base_classes)]
    used = {frozenset(tasks[0].class_labels)}
    for task_id, size in enumerate(sizes[1:], start=1):
        pool = tasks[-1].class_labels if nested else tuple(base_classes)
        labels = _sample_subset(pool, size, used, rng)
        used.add(frozenset(labels))
        tasks.append(TaskSpec(task_id=task_id, class_labels=labels))
    logger.debug(f"Decreasing plan {sizes} (seed {seed}): {[t.class_labels for t in tasks]}")
    return TaskPlan(tasks=tasks, base_classes=tuple(base_classes), seed=seed, nested=nested)


def make_fixed_size_plan(
    base_classes: Sequence[int], head_count: int, size: int, seed: int
) -> TaskPlan:
    """Full set first, then ``head_count - 1`` distinct seeded subsets of one size."""
    if head_count < 1:
        raise ValueError("head_count must be at least 1")
    if size < MIN_TASK_SIZE:
        raise ValueError(f"Task size must be at least {MIN_TASK_SIZE}")
    if size > len(base_classes):
        raise ValueError(f"Task size {size} exceeds the {len(base_classes)} base classes")
    available = math.comb(len(base_classes), size) - (1 if size == len(base_classes) else 0)
    if head_count - 1 > available:
        raise ValueError(
            f"Only {available} distinct {size}-class subsets exist, {head_count - 1} requested"
        )

    rng = np.random.default_rng(seed)
    tasks = [_full_task(base_classes)]
    used = {frozenset(tasks[0].class_labels)}
    for task_id in range(1, head_count):
        labels = _sample_subset(tuple(base_classes), size, used, rng)
        used.add(frozenset(labels))
        tasks.append(TaskSpec(task_id=task_id, class_labels=labels))
    return TaskPlan(tasks=tasks, base_classes=tuple(base_classes), seed=seed)


def plan_from_label_lists(
    label_lists: Sequence[Sequence[int]], base_classes: Sequence[int], seed: int = 0
) -> TaskPlan:
    tasks = [
        TaskSpec(task_id=i, class_labels=tuple(int(c) for c in labels))
        for i, labels in enumerate(label_lists)
    ]
    return TaskPlan(tasks=tasks, base_classes=tuple(base_classes), seed=seed)
