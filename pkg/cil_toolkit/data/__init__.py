from .dataset import Dataset, DatasetFormatError, load_dataset, save_dataset
from .splits import (
    LABEL_ORDER,
    SEEDED_ORDER,
    ClassSchedule,
    SplitSpec,
    parse_schedule,
    split_indices,
    stratified_split,
)
from .synth import blob_centers, synth_blobs

__all__ = [
    # Dataset files
    "Dataset",
    "DatasetFormatError",
    "load_dataset",
    "save_dataset",
    # Splits and schedules
    "LABEL_ORDER",
    "SEEDED_ORDER",
    "ClassSchedule",
    "SplitSpec",
    "parse_schedule",
    "split_indices",
    "stratified_split",
    # Synthetic data
    "blob_centers",
    "synth_blobs",
]
