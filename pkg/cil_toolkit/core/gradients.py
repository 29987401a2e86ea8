"""Reverse-mode gradients through the fixed backbone/head topology."""

import logging
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .layers import EVAL, TRAIN
from .model import ModelState, backbone_backward, backbone_forward
from .optim import FreezeMask
from .tensor import Tensor, check_finite

logger = logging.getLogger(__name__)


def compute_gradients(
    model: ModelState,
    batch: Tensor,
    head_losses: Mapping[int, object],
    mode: str = TRAIN,
    freeze_mask: Optional[FreezeMask] = None,
    dropout: bool = True,
    update_running_stats: bool = True,
    head_values: Optional[Dict[int, float]] = None,
) -> Tuple[float, Dict[str, Tensor]]:
    """Loss and gradients for one or more heads over a single backbone pass.

    ``head_losses`` maps a head id to a loss term exposing ``value_and_grad``.
    Gradients of frozen tensors are omitted; when the whole backbone is
    frozen the backbone backward pass is skipped. When ``head_values`` is
    given it receives each head's loss value.
    """
    mask = freeze_mask or FreezeMask()
    result = backbone_forward(model, batch, mode, dropout, update_running_stats)
    embedding = result.embedding
    d_embedding = np.zeros_like(embedding)
    total = 0.0
    grads: Dict[str, Tensor] = {}

    for head_id, loss_spec in head_losses.items():
        head = model.head(head_id)
        logits = check_finite(head.logits(embedding), "logits")
        value, d_logits = loss_spec.value_and_grad(logits)
        total += value
        if head_values is not None:
            head_values[head_id] = value
        weight_name, bias_name = head.param_names()
        grads[weight_name] = embedding.T @ d_logits
        grads[bias_name] = d_logits.sum(axis=0)
        d_embedding += d_logits @ head.weight.T

    if not mask.backbone_frozen:
        grads.update(backbone_backward(model, d_embedding, result.caches))

    check_finite(np.asarray(total), "loss")
    filtered = {}
    for name, grad in grads.items():
        if mask.is_frozen(name):
            continue
        filtered[name] = check_finite(grad, f"gradient of {name}")
    return total, filtered


def backward(
    model: ModelState,
    batch: Tensor,
    head_id: int,
    loss_spec: object,
    mode: str = EVAL,
    freeze_mask: Optional[FreezeMask] = None,
    dropout: bool = True,
) -> Dict[str, Tensor]:
    """Gradients of a single head's loss, keyed by parameter name."""
    _, grads = compute_gradients(
        model,
        batch,
        {head_id: loss_spec},
        mode=mode,
        freeze_mask=freeze_mask,
        dropout=dropout,
        update_running_stats=mode == TRAIN,
    )
    return grads
