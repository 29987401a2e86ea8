"""Numeric policy shared by the model core.

Tensors are plain ``numpy.ndarray`` objects. Runtime training uses 32-bit
floats; gradient checks and oracle tests build models in 64-bit mode.
"""

from typing import Final, Iterable, Sequence, Tuple

import numpy as np

Tensor = np.ndarray

FLOAT32: Final = np.float32
FLOAT64: Final = np.float64
DEFAULT_DTYPE: Final = FLOAT32


class NumericalError(ArithmeticError):
    """Raised when a forward or backward pass produces NaN or Inf."""


class ShapeError(ValueError):
    """Raised when tensor shapes do not line up."""


def resolve_dtype(verification: bool = False) -> np.dtype:
    return np.dtype(FLOAT64 if verification else DEFAULT_DTYPE)


def check_finite(array: Tensor, what: str) -> Tensor:
    if not np.all(np.isfinite(array)):
        raise NumericalError(f"Non-finite values in {what}")
    return array


def check_shape(array: Tensor, expected: Sequence[int], what: str) -> None:
    if tuple(array.shape) != tuple(expected):
        raise ShapeError(
            f"Shape mismatch for {what}: expected {tuple(expected)}, got {tuple(array.shape)}"
        )


def numel(shape: Iterable[int]) -> int:
    return int(np.prod(tuple(shape), dtype=np.int64))


def as_batch(batch: Tensor, input_shape: Tuple[int, ...], dtype: np.dtype) -> Tensor:
    """Cast a batch to the model dtype after checking its trailing shape."""
    batch = np.asarray(batch)
    if batch.ndim != len(input_shape) + 1 or tuple(batch.shape[1:]) != tuple(input_shape):
        raise ShapeError(
            f"Batch shape {tuple(batch.shape)} does not match input shape {tuple(input_shape)}"
        )
    return batch.astype(dtype, copy=False)
