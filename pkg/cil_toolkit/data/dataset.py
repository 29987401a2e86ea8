"""Feature datasets stored as a JSON manifest plus raw little-endian binaries."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Final, Iterable, List, Sequence, Tuple, Union

import numpy as np

from utils import atomic_write_bytes, atomic_write_text

logger = logging.getLogger(__name__)

MANIFEST_FILE: Final[str] = "manifest.json"
FEATURES_FILE: Final[str] = "features.bin"
LABELS_FILE: Final[str] = "labels.bin"
DATASET_VERSION: Final[int] = 1
FEATURE_DTYPE: Final[str] = "<f4"
LABEL_DTYPE: Final[str] = "<u4"


class DatasetFormatError(ValueError):
    """Raised when dataset files are inconsistent with their manifest."""


@dataclass(eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: List[str]
    # Row positions in the dataset this one was cut from.
    source_indices: np.ndarray = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.source_indices is None:
            self.source_indices = np.arange(len(self.labels), dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise DatasetFormatError(
                f"{len(self.features)} feature rows but {len(self.labels)} labels"
            )
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise DatasetFormatError(
                f"Labels must lie in [0, {self.num_classes})"
            )

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def feature_shape(self) -> Tuple[int, ...]:
        return tuple(self.features.shape[1:])

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            class_names=self.class_names,
            source_indices=self.source_indices[idx],
        )

    def indices_of(self, classes: Iterable[int]) -> np.ndarray:
        """Row indices whose label is in ``classes``, ascending."""
        return np.flatnonzero(np.isin(self.labels, np.fromiter(classes, dtype=np.int64)))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def validate_coverage(self) -> None:
        missing = np.flatnonzero(self.class_counts() == 0)
        if missing.size:
            raise DatasetFormatError(f"Classes without samples: {missing.tolist()}")

    def manifest(self) -> Dict[str, Any]:
        return {
            "version": DATASET_VERSION,
            "num_samples": len(self),
            "feature_shape": list(self.feature_shape),
            "class_names": list(self.class_names),
        }


def save_dataset(ds: Dataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(
        path / FEATURES_FILE,
        np.ascontiguousarray(ds.features, dtype=FEATURE_DTYPE).tobytes(),
    )
    atomic_write_bytes(
        path / LABELS_FILE, np.ascontiguousarray(ds.labels, dtype=LABEL_DTYPE).tobytes()
    )
    atomic_write_text(path / MANIFEST_FILE, json.dumps(ds.manifest(), indent=2) + "\n")
    logger.info(f"Saved dataset with {len(ds)} samples and {ds.num_classes} classes to {path}")
    return path


def _read_manifest(path: Path) -> Dict[str, Any]:
    try:
        manifest = json.loads((path / MANIFEST_FILE).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"Unreadable manifest in {path}: {e}") from e
    for key in ("version", "num_samples", "feature_shape", "class_names"):
        if key not in manifest:
            raise DatasetFormatError(f"Manifest in {path} is missing '{key}'")
    if manifest["version"] != DATASET_VERSION:
        raise DatasetFormatError(f"Unsupported dataset version {manifest['version']}")
    return manifest


def load_dataset(path: Union[str, Path]) -> Dataset:
    path = Path(path)
    manifest = _read_manifest(path)
    num_samples = int(manifest["num_samples"])
    feature_shape = tuple(int(d) for d in manifest["feature_shape"])
    class_names = [str(name) for name in manifest["class_names"]]

    feature_bytes = (path / FEATURES_FILE).read_bytes()
    label_bytes = (path / LABELS_FILE).read_bytes()
    expected_features = num_samples * int(np.prod(feature_shape)) * 4
    if len(feature_bytes) != expected_features:
        raise DatasetFormatError(
            f"{FEATURES_FILE} has {len(feature_bytes)} bytes, manifest implies {expected_features}"
        )
    if len(label_bytes) != num_samples * 4:
        raise DatasetFormatError(
            f"{LABELS_FILE} has {len(label_bytes)} bytes, manifest implies {num_samples * 4}"
        )

    features = np.frombuffer(feature_bytes, dtype=FEATURE_DTYPE).astype(np.float32)
    labels = np.frombuffer(label_bytes, dtype=LABEL_DTYPE).astype(np.int64)
    if labels.size and labels.max() >= len(class_names):
        raise DatasetFormatError(
            f"Label {labels.max()} exceeds the {len(class_names)} declared classes"
        )
    ds = Dataset(
        features=features.reshape((num_samples,) + feature_shape),
        labels=labels,
        class_names=class_names,
    )
    ds.validate_coverage()
    logger.info(f"Loaded dataset {path}: {num_samples} samples, shape {feature_shape}")
    return ds
