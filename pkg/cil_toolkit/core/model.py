import copy
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .layers import (
    EVAL,
    TRAIN,
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    ForwardContext,
    GlobalAvgPool,
    Layer,
    ReLU,
)
from .tensor import (
    DEFAULT_DTYPE,
    ShapeError,
    Tensor,
    as_batch,
    check_finite,
)

logger = logging.getLogger(__name__)

MLP = "mlp"
CONVNET = "convnet"
BACKBONE_PREFIX = "backbone."
HEAD_PREFIX = "head."


@dataclass
class BackboneSpec:
    """Backbone topology: an MLP or the four-stage ConvNet."""

    kind: str
    input_shape: Tuple[int, ...]
    embedding_dim: int
    hidden_sizes: List[int] = field(default_factory=list)
    conv_channels: List[int] = field(default_factory=list)
    kernel_size: int = 3
    dropout_rate: float = 0.5

    def __post_init__(self) -> None:
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.validate()

    def validate(self) -> None:
        if not self.input_shape or any(d <= 0 for d in self.input_shape):
            raise ValueError(f"Invalid input shape {self.input_shape}")
        if self.embedding_dim <= 0:
            raise ValueError("embedding_dim must be positive")
        if self.kind == MLP:
            if not self.hidden_sizes or any(h <= 0 for h in self.hidden_sizes):
                raise ValueError("MLP needs positive hidden sizes")
            if self.hidden_sizes[-1] != self.embedding_dim:
                raise ValueError(
                    f"MLP embedding_dim {self.embedding_dim} must equal last hidden size {self.hidden_sizes[-1]}"
                )
        elif self.kind == CONVNET:
            if len(self.conv_channels) != 4 or any(c <= 0 for c in self.conv_channels):
                raise ValueError("ConvNet needs exactly 4 positive conv channel counts")
            if self.conv_channels[-1] != self.embedding_dim:
                raise ValueError(
                    f"ConvNet embedding_dim {self.embedding_dim} must equal last conv channels {self.conv_channels[-1]}"
                )
            if len(self.input_shape) not in (2, 3):
                raise ValueError("ConvNet input shape must be (H, W) or (C, H, W)")
            if self.kernel_size <= 0:
                raise ValueError("kernel_size must be positive")
            if not 0.0 <= self.dropout_rate <= 1.0:
                raise ValueError("dropout_rate must be in [0, 1]")
        else:
            raise ValueError(f"Unknown backbone kind: {self.kind}")

    def build_layers(self) -> List[Layer]:
        if self.kind == MLP:
            layers: List[Layer] = [Flatten("flatten")]
            in_features = int(np.prod(self.input_shape))
            for i, size in enumerate(self.hidden_sizes):
                layers.append(Dense(f"dense{i}", in_features, size))
                layers.append(ReLU(f"relu{i}"))
                in_features = size
            return layers

        in_channels = self.input_shape[0] if len(self.input_shape) == 3 else 1
        layers = []
        for i, channels in enumerate(self.conv_channels):
            layers.append(Conv2D(f"conv{i}", in_channels, channels, self.kernel_size))
            layers.append(BatchNorm(f"bn{i}", channels))
            layers.append(ReLU(f"relu{i}"))
            in_channels = channels
        layers.append(Dropout("dropout", self.dropout_rate))
        layers.append(GlobalAvgPool("pool"))
        return layers

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "embedding_dim": self.embedding_dim,
        }
        if self.kind == MLP:
            data["hidden_sizes"] = list(self.hidden_sizes)
        else:
            data["conv_channels"] = list(self.conv_channels)
            data["kernel_size"] = self.kernel_size
            data["dropout_rate"] = self.dropout_rate
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BackboneSpec":
        return cls(
            kind=data["kind"],
            input_shape=tuple(data["input_shape"]),
            embedding_dim=int(data["embedding_dim"]),
            hidden_sizes=list(data.get("hidden_sizes", [])),
            conv_channels=list(data.get("conv_channels", [])),
            kernel_size=int(data.get("kernel_size", 3)),
            dropout_rate=float(data.get("dropout_rate", 0.5)),
        )


@dataclass
class Head:
    """Linear classifier over the shared embedding, bound to a class subset."""

    task_id: int
    class_labels: List[int]
    weight: Tensor
    bias: Tensor

    def __post_init__(self) -> None:
        self.class_labels = [int(c) for c in self.class_labels]
        if len(set(self.class_labels)) != len(self.class_labels):
            raise ValueError(f"Head {self.task_id} has duplicate class labels")
        if self.weight.shape[1] != len(self.class_labels) or self.bias.shape != (
            len(self.class_labels),
        ):
            raise ShapeError(
                f"Head {self.task_id} output width does not match its {len(self.class_labels)} labels"
            )

    @property
    def width(self) -> int:
        return len(self.class_labels)

    def local_index(self) -> Dict[int, int]:
        return {label: i for i, label in enumerate(self.class_labels)}

    def logits(self, embedding: Tensor) -> Tensor:
        return embedding @ self.weight + self.bias

    def param_names(self) -> Tuple[str, str]:
        return (
            f"{HEAD_PREFIX}{self.task_id}.weight",
            f"{HEAD_PREFIX}{self.task_id}.bias",
        )


def init_head(
    task_id: int,
    class_labels: Sequence[int],
    embedding_dim: int,
    rng: np.random.Generator,
    dtype: np.dtype,
) -> Head:
    limit = 1.0 / np.sqrt(embedding_dim)
    weight = rng.uniform(-limit, limit, size=(embedding_dim, len(class_labels)))
    return Head(
        task_id=task_id,
        class_labels=list(class_labels),
        weight=weight.astype(dtype),
        bias=np.zeros(len(class_labels), dtype=dtype),
    )


class ModelState:
    """Shared backbone parameters, batch-norm buffers, heads and the generator.

    All heads read the same backbone arrays; optimizer steps update them in
    place so their identity is stable for the life of the model.
    """

    def __init__(
        self,
        spec: BackboneSpec,
        params: Dict[str, Tensor],
        buffers: Dict[str, Tensor],
        heads: List[Head],
        seed: int,
        dtype: np.dtype,
    ) -> None:
        self.spec = spec
        self.layers = spec.build_layers()
        self.params = params
        self.buffers = buffers
        self.heads = heads
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        for head in heads:
            self._check_head(head)

    def _check_head(self, head: Head) -> None:
        if head.weight.shape[0] != self.spec.embedding_dim:
            raise ShapeError(
                f"Head {head.task_id} input width {head.weight.shape[0]} != embedding_dim {self.spec.embedding_dim}"
            )

    def head(self, task_id: int) -> Head:
        for head in self.heads:
            if head.task_id == task_id:
                return head
        raise KeyError(f"Unknown head id: {task_id}")

    def replace_head(self, head: Head) -> None:
        self._check_head(head)
        for i, existing in enumerate(self.heads):
            if existing.task_id == head.task_id:
                self.heads[i] = head
                return
        raise KeyError(f"Unknown head id: {head.task_id}")

    def backbone_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        for layer in self.layers:
            for name in layer.param_names:
                yield f"{BACKBONE_PREFIX}{layer.name}.{name}", self.params[
                    f"{layer.name}.{name}"
                ]

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        """Trainable tensors in declaration order: backbone layers, then heads."""
        named = list(self.backbone_parameters())
        for head in self.heads:
            weight_name, bias_name = head.param_names()
            named.append((weight_name, head.weight))
            named.append((bias_name, head.bias))
        return named

    def state_tensors(self) -> List[Tuple[str, Tensor]]:
        """Every persisted tensor in declaration order, buffers after their layer."""
        tensors = []
        for layer in self.layers:
            for name in layer.param_names:
                key = f"{layer.name}.{name}"
                tensors.append((f"{BACKBONE_PREFIX}{key}", self.params[key]))
            for name in layer.buffer_names:
                key = f"{layer.name}.{name}"
                tensors.append((f"{BACKBONE_PREFIX}{key}", self.buffers[key]))
        for head in self.heads:
            weight_name, bias_name = head.param_names()
            tensors.append((weight_name, head.weight))
            tensors.append((bias_name, head.bias))
        return tensors

    def copy(self) -> "ModelState":
        return copy.deepcopy(self)

    def with_heads(self, heads: List[Head]) -> "ModelState":
        clone = copy.copy(self)
        clone.params = {k: v.copy() for k, v in self.params.items()}
        clone.buffers = {k: v.copy() for k, v in self.buffers.items()}
        clone.heads = [copy.deepcopy(h) for h in heads]
        clone.rng = copy.deepcopy(self.rng)
        for head in clone.heads:
            clone._check_head(head)
        return clone

    def load_tensors(self, source: "ModelState") -> None:
        """Copy every tensor value from ``source`` into this model in place."""
        for (name, target), (other_name, value) in zip(
            self.state_tensors(), source.state_tensors()
        ):
            if name != other_name or target.shape != value.shape:
                raise ShapeError(f"Cannot load {other_name} into {name}")
            target[...] = value

    def __repr__(self) -> str:
        widths = [h.width for h in self.heads]
        return f"ModelState(kind={self.spec.kind}, heads={widths}, dtype={self.dtype})"


def build_model(
    spec: BackboneSpec,
    heads: Sequence[Tuple[int, Sequence[int]]],
    seed: int,
    dtype: np.dtype = DEFAULT_DTYPE,
) -> ModelState:
    """Initialize a fresh model with one head per ``(task_id, class_labels)``."""
    dtype = np.dtype(dtype)
    init_rng = np.random.default_rng([seed, 0])
    params: Dict[str, Tensor] = {}
    buffers: Dict[str, Tensor] = {}
    for layer in spec.build_layers():
        for name, value in layer.init_params(init_rng, dtype).items():
            params[f"{layer.name}.{name}"] = value
        for name, value in layer.init_buffers(dtype).items():
            buffers[f"{layer.name}.{name}"] = value
    head_list = [
        init_head(task_id, labels, spec.embedding_dim, init_rng, dtype)
        for task_id, labels in heads
    ]
    return ModelState(spec, params, buffers, head_list, seed, dtype)


@dataclass
class BackbonePass:
    embedding: Tensor
    caches: List[Any]


def backbone_forward(
    model: ModelState,
    batch: Tensor,
    mode: str = EVAL,
    dropout: bool = True,
    update_running_stats: bool = True,
) -> BackbonePass:
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"Unknown mode: {mode}")
    x = as_batch(batch, model.spec.input_shape, model.dtype)
    if model.spec.kind == CONVNET and x.ndim == 3:
        x = x[:, None, :, :]
    ctx = ForwardContext(
        mode=mode,
        rng=model.rng,
        dropout=dropout,
        update_running_stats=update_running_stats,
    )
    caches = []
    for layer in model.layers:
        params = {n: model.params[f"{layer.name}.{n}"] for n in layer.param_names}
        buffers = {n: model.buffers[f"{layer.name}.{n}"] for n in layer.buffer_names}
        x, cache = layer.forward(params, buffers, x, ctx)
        caches.append(cache)
    return BackbonePass(embedding=x, caches=caches)


def backbone_backward(
    model: ModelState, d_embedding: Tensor, caches: List[Any]
) -> Dict[str, Tensor]:
    grads: Dict[str, Tensor] = {}
    dx = d_embedding
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        params = {n: model.params[f"{layer.name}.{n}"] for n in layer.param_names}
        dx, layer_grads = layer.backward(params, dx, cache)
        for name, grad in layer_grads.items():
            grads[f"{BACKBONE_PREFIX}{layer.name}.{name}"] = grad
    return grads


def forward(
    model: ModelState,
    batch: Tensor,
    head_id: int,
    mode: str = EVAL,
    dropout: bool = True,
    update_running_stats: bool = True,
) -> Tensor:
    head = model.head(head_id)
    result = backbone_forward(model, batch, mode, dropout, update_running_stats)
    return check_finite(head.logits(result.embedding), "logits")


def embed(model: ModelState, features: Tensor, batch_size: int = 256) -> Tensor:
    """Eval-mode backbone embeddings, computed in mini-batches."""
    chunks = [
        backbone_forward(model, features[start : start + batch_size], EVAL).embedding
        for start in range(0, len(features), batch_size)
    ]
    if not chunks:
        return np.zeros((0, model.spec.embedding_dim), dtype=model.dtype)
    return np.concatenate(chunks, axis=0)


def predict_logits(
    model: ModelState, features: Tensor, head_id: int, batch_size: int = 256
) -> Tensor:
    head = model.head(head_id)
    logits = head.logits(embed(model, features, batch_size))
    return check_finite(logits, "logits")


def predict_labels(
    model: ModelState, features: Tensor, head_id: int, batch_size: int = 256
) -> np.ndarray:
    """Eval-mode argmax mapped back to global class labels."""
    head = model.head(head_id)
    local = np.argmax(predict_logits(model, features, head_id, batch_size), axis=1)
    return np.asarray(head.class_labels, dtype=np.int64)[local]


def expand_head(
    head: Head,
    new_class_labels: Sequence[int],
    init_scale: float,
    rng: np.random.Generator,
) -> Head:
    """Append output neurons for new classes, keeping existing columns intact."""
    new_labels = [int(c) for c in new_class_labels]
    overlap = set(new_labels) & set(head.class_labels)
    if overlap or len(set(new_labels)) != len(new_labels):
        raise ValueError(f"Duplicate class labels for head expansion: {sorted(overlap) or new_labels}")
    dtype = head.weight.dtype
    new_columns = rng.uniform(
        -init_scale, init_scale, size=(head.weight.shape[0], len(new_labels))
    ).astype(dtype)
    return Head(
        task_id=head.task_id,
        class_labels=head.class_labels + new_labels,
        weight=np.concatenate([head.weight, new_columns], axis=1),
        bias=np.concatenate([head.bias, np.zeros(len(new_labels), dtype=dtype)]),
    )


def model_checksum(model: ModelState, scope: str = "all") -> str:
    """sha256 over tensors in declaration order; ``backbone`` skips the heads."""
    digest = hashlib.sha256()
    for name, tensor in model.state_tensors():
        if scope == "backbone" and not name.startswith(BACKBONE_PREFIX):
            continue
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(tensor).tobytes())
    return digest.hexdigest()
