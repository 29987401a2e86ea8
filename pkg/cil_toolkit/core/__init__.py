from .tensor import NumericalError, ShapeError, Tensor, resolve_dtype
from .layers import EVAL, TRAIN
from .model import (
    CONVNET,
    MLP,
    BackboneSpec,
    Head,
    ModelState,
    build_model,
    embed,
    expand_head,
    forward,
    model_checksum,
    predict_labels,
    predict_logits,
)
from .losses import (
    CrossEntropyTerm,
    DistillationTerm,
    WeightedSum,
    cross_entropy,
    kd_loss,
)
from .optim import (
    BACKBONE_ONLY,
    NONE,
    EarlyStopping,
    FreezeMask,
    LrSchedule,
    OptimizerState,
    cosine_lr,
    set_freeze,
    sgd_step,
)
from .gradients import backward, compute_gradients
from .snapshot import SnapshotFormatError, load_snapshot, save_snapshot

__all__ = [
    # Numeric policy
    "NumericalError",
    "ShapeError",
    "Tensor",
    "resolve_dtype",
    "EVAL",
    "TRAIN",
    # Model
    "CONVNET",
    "MLP",
    "BackboneSpec",
    "Head",
    "ModelState",
    "build_model",
    "embed",
    "expand_head",
    "forward",
    "model_checksum",
    "predict_labels",
    "predict_logits",
    # Losses
    "CrossEntropyTerm",
    "DistillationTerm",
    "WeightedSum",
    "cross_entropy",
    "kd_loss",
    # Optimization
    "BACKBONE_ONLY",
    "NONE",
    "EarlyStopping",
    "FreezeMask",
    "LrSchedule",
    "OptimizerState",
    "cosine_lr",
    "set_freeze",
    "sgd_step",
    "backward",
    "compute_gradients",
    # Snapshots
    "SnapshotFormatError",
    "load_snapshot",
    "save_snapshot",
]
