"""Model snapshot files.

Layout: ``CILM`` magic, u32 format version, u32 manifest byte length, the
UTF-8 JSON manifest, then every tensor as little-endian float32 in
declaration order.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Final, Union

import numpy as np

from utils import atomic_write_bytes

from .model import BackboneSpec, ModelState, build_model
from .tensor import numel

logger = logging.getLogger(__name__)

MAGIC: Final[bytes] = b"CILM"
FORMAT_VERSION: Final[int] = 1
TENSOR_DTYPE: Final[str] = "<f4"


class SnapshotFormatError(ValueError):
    """Raised when a snapshot file is malformed."""


def snapshot_manifest(model: ModelState) -> Dict[str, Any]:
    return {
        "backbone": model.spec.to_dict(),
        "heads": [
            {"task_id": head.task_id, "class_labels": list(head.class_labels)}
            for head in model.heads
        ],
        "seed": model.seed,
        "dtype": str(model.dtype),
        "tensors": [
            {"name": name, "shape": list(tensor.shape)}
            for name, tensor in model.state_tensors()
        ],
    }


def encode_snapshot(model: ModelState) -> bytes:
    manifest = json.dumps(snapshot_manifest(model), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(manifest)), manifest]
    for _, tensor in model.state_tensors():
        parts.append(np.ascontiguousarray(tensor, dtype=TENSOR_DTYPE).tobytes())
    return b"".join(parts)


def save_snapshot(model: ModelState, path: Union[str, Path]) -> Path:
    path = Path(path)
    atomic_write_bytes(path, encode_snapshot(model))
    logger.info(f"Saved snapshot with {len(model.heads)} head(s) to {path}")
    return path


def decode_snapshot(payload: bytes) -> ModelState:
    header = len(MAGIC) + 8
    if len(payload) < header or payload[: len(MAGIC)] != MAGIC:
        raise SnapshotFormatError("Bad snapshot magic")
    version, manifest_len = struct.unpack("<II", payload[len(MAGIC) : header])
    if version != FORMAT_VERSION:
        raise SnapshotFormatError(f"Unsupported snapshot version {version}")
    try:
        manifest = json.loads(payload[header : header + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SnapshotFormatError(f"Unreadable snapshot manifest: {e}") from e

    spec = BackboneSpec.from_dict(manifest["backbone"])
    heads = [(h["task_id"], h["class_labels"]) for h in manifest["heads"]]
    model = build_model(spec, heads, int(manifest["seed"]), np.dtype(manifest["dtype"]))

    expected = [(t["name"], tuple(t["shape"])) for t in manifest["tensors"]]
    actual = [(name, tuple(tensor.shape)) for name, tensor in model.state_tensors()]
    if expected != actual:
        raise SnapshotFormatError("Snapshot tensors do not match the declared topology")

    body = payload[header + manifest_len :]
    item = np.dtype(TENSOR_DTYPE).itemsize
    total = sum(numel(shape) for _, shape in expected) * item
    if len(body) != total:
        raise SnapshotFormatError(
            f"Snapshot body has {len(body)} bytes, expected {total}"
        )
    offset = 0
    for _, tensor in model.state_tensors():
        size = tensor.size * item
        values = np.frombuffer(body, dtype=TENSOR_DTYPE, count=tensor.size, offset=offset)
        tensor[...] = values.reshape(tensor.shape)
        offset += size
    return model


def load_snapshot(path: Union[str, Path]) -> ModelState:
    path = Path(path)
    model = decode_snapshot(path.read_bytes())
    logger.info(f"Loaded snapshot {path}: {model}")
    return model
