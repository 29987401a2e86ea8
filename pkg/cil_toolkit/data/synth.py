import logging

import numpy as np

from .dataset import Dataset

logger = logging.getLogger(__name__)


def _draw_centers(
    rng: np.random.Generator, num_classes: int, dim: int, separation: float
) -> np.ndarray:
    directions = rng.standard_normal((num_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return directions * separation


def blob_centers(num_classes: int, dim: int, separation: float, seed: int) -> np.ndarray:
    """The centers ``synth_blobs`` uses for the same arguments."""
    return _draw_centers(np.random.default_rng(seed), num_classes, dim, separation)


def synth_blobs(
    num_classes: int,
    n_per_class: int,
    dim: int,
    separation: float,
    noise_sigma: float,
    seed: int,
) -> Dataset:
    """Gaussian blobs around seeded random unit directions scaled by ``separation``."""
    if num_classes < 2:
        raise ValueError("Need at least 2 classes")
    if n_per_class < 1 or dim < 1:
        raise ValueError("n_per_class and dim must be positive")
    if separation <= 0:
        raise ValueError("separation must be positive")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")

    rng = np.random.default_rng(seed)
    centers = _draw_centers(rng, num_classes, dim, separation)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    noise = rng.standard_normal((len(labels), dim)) * noise_sigma
    features = (centers[labels] + noise).astype(np.float32)
    logger.debug(f"Generated {len(labels)} blob samples in {dim} dimensions")
    return Dataset(
        features=features,
        labels=labels,
        class_names=[f"class_{c}" for c in range(num_classes)],
    )
