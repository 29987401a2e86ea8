"""Budgeted, class-balanced exemplar storage with random and herding selection.

The store keeps row indices into the canonical training corpus, never copies
of the samples. Selections are ordered: truncating a class to a smaller quota
keeps the prefix chosen first.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from cil_toolkit.core.model import ModelState, embed
from cil_toolkit.data.dataset import Dataset

logger = logging.getLogger(__name__)

RANDOM = "random"
HERDING = "herding"
STRATEGIES = (RANDOM, HERDING)


@dataclass
class ExemplarStore:
    """Exemplar indices per class under a total budget of ``capacity``.

    After :func:`rebalance`, every class holds its quota from :func:`class_quotas`
    (floor or ceil of ``capacity / n``), except a class with fewer training samples than
    its quota: it keeps all of them and the missing slots stay empty. They are not lent
    to other classes, so the store may then sit below ``capacity`` and the per-class
    counts may differ by more than one.
    """

    capacity: int
    strategy: str = RANDOM
    seed: int = 0
    per_class: Dict[int, List[int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.capacity <= 0:
            raise ValueError(f"Exemplar capacity must be positive, got {self.capacity}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"Unknown exemplar strategy: {self.strategy}")

    def total(self) -> int:
        return sum(len(v) for v in self.per_class.values())

    @property
    def classes(self) -> List[int]:
        return sorted(self.per_class)

    def indices(self) -> np.ndarray:
        """All stored indices, by ascending class then selection order."""
        flat = [i for c in self.classes for i in self.per_class[c]]
        return np.asarray(flat, dtype=np.int64)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "capacity": self.capacity,
            "strategy": self.strategy,
            "seed": self.seed,
            "per_class": {str(c): list(self.per_class[c]) for c in self.classes},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExemplarStore":
        return cls(
            capacity=int(data["capacity"]),
            strategy=data.get("strategy", RANDOM),
            seed=int(data.get("seed", 0)),
            per_class={
                int(c): [int(i) for i in idx] for c, idx in data.get("per_class", {}).items()
            },
        )


def class_quotas(capacity: int, seen_classes: Iterable[int]) -> Dict[int, int]:
    """floor(K/n) per class; the remainder goes one each to the lowest labels."""
    labels = sorted(set(int(c) for c in seen_classes))
    if not labels:
        return {}
    if capacity < len(labels):
        raise ValueError(
            f"Exemplar capacity {capacity} cannot hold one sample for each of {len(labels)} classes"
        )
    base, remainder = divmod(capacity, len(labels))
    return {c: base + (1 if i < remainder else 0) for i, c in enumerate(labels)}


def herding_order(embeddings: np.ndarray, count: int, start: Sequence[int] = ()) -> List[int]:
    """Greedy positions whose running mean tracks the class mean.

    At step k the chosen position minimizes ``||mu - (S + e_i) / k||`` over
    unselected rows, lowest position on ties. ``start`` seeds the selection.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    mu = emb.mean(axis=0)
    selected = list(start)
    running = emb[selected].sum(axis=0) if selected else np.zeros_like(mu)
    available = np.ones(len(emb), dtype=bool)
    available[selected] = False
    while len(selected) < min(count, len(emb)):
        k = len(selected) + 1
        dist = np.linalg.norm(mu[None, :] - (running[None, :] + emb) / k, axis=1)
        dist[~available] = np.inf
        pick = int(np.argmin(dist))
        selected.append(pick)
        available[pick] = False
        running = running + emb[pick]
    return selected


def _fill_random(
    available: np.ndarray, existing: List[int], quota: int, seed: int, label: int
) -> List[int]:
    order = available[np.random.default_rng([seed, label]).permutation(len(available))]
    kept = set(existing)
    extra = [int(i) for i in order if int(i) not in kept]
    return existing + extra[: quota - len(existing)]


def _fill_herding(
    available: np.ndarray, existing: List[int], quota: int, model: ModelState, features: np.ndarray
) -> List[int]:
    position = {int(i): p for p, i in enumerate(available)}
    embeddings = embed(model, features[available])
    order = herding_order(embeddings, quota, [position[i] for i in existing])
    return [int(available[p]) for p in order]


def rebalance(
    store: ExemplarStore,
    seen_classes: Iterable[int],
    train: Dataset,
    model: Optional[ModelState] = None,
) -> ExemplarStore:
    """Return a new store spreading the budget evenly over ``seen_classes``."""
    quotas = class_quotas(store.capacity, seen_classes)
    if store.strategy == HERDING and model is None:
        raise ValueError("Herding selection needs a model for embeddings")

    per_class: Dict[int, List[int]] = {}
    for label, quota in quotas.items():
        available = train.indices_of([label])
        if available.size == 0:
            raise ValueError(f"Class {label} has no training samples")
        existing = [int(i) for i in store.per_class.get(label, [])][:quota]
        if len(existing) < quota:
            if store.strategy == RANDOM:
                existing = _fill_random(available, existing, quota, store.seed, label)
            else:
                existing = _fill_herding(available, existing, quota, model, train.features)
        if len(existing) < quota:
            logger.warning(
                f"Class {label} has only {len(existing)} training samples for a quota of {quota}"
            )
        per_class[label] = existing

    result = ExemplarStore(store.capacity, store.strategy, store.seed, per_class)
    logger.debug(
        f"Rebalanced exemplars over {len(quotas)} classes: {result.total()}/{store.capacity} used"
    )
    return result


def build_balanced_set(
    store: ExemplarStore,
    train: Dataset,
    new_classes: Sequence[int],
    per_class_m: int,
    seed: int,
    step_index: int = 0,
) -> np.ndarray:
    """Exactly ``per_class_m`` indices per stored class and per new class, seeded."""
    if per_class_m < 0:
        raise ValueError("per_class_m must be nonnegative")
    pools = {c: np.asarray(store.per_class[c], dtype=np.int64) for c in store.classes}
    for label in new_classes:
        pools[int(label)] = train.indices_of([label])
    chosen = []
    for label in sorted(pools):
        pool = pools[label]
        if len(pool) < per_class_m:
            raise ValueError(
                f"Class {label} has {len(pool)} samples, {per_class_m} requested for the balanced set"
            )
        rng = np.random.default_rng([seed, step_index, label])
        chosen.append(np.sort(rng.choice(pool, size=per_class_m, replace=False)))
    if not chosen:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(chosen).astype(np.int64)
