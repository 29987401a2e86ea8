"""Central finite-difference checks for every layer and loss rule.

All checks run in 64-bit mode with dropout disabled.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Iterable, List, Sequence

import numpy as np

from . import layers as L
from .gradients import backward
from .losses import (
    CrossEntropyTerm,
    DistillationTerm,
    WeightedSum,
    cross_entropy_with_grad,
    kd_loss_with_grad,
)
from .model import CONVNET, MLP, BackboneSpec, backbone_forward, build_model
from .tensor import FLOAT64, Tensor

logger = logging.getLogger(__name__)

FD_EPS = 1e-5
DEFAULT_TOLERANCE = 1e-6
DEFAULT_SEEDS = (0, 1, 2)


@dataclass
class GradCheckResult:
    name: str
    seed: int
    relative_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.relative_error)) and self.relative_error < self.tolerance


def numeric_gradient(f: Callable[[], float], x: Tensor, eps: float = FD_EPS) -> Tensor:
    """Central differences of a scalar function of ``x``, perturbing in place."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        original = x[idx]
        x[idx] = original + eps
        plus = f()
        x[idx] = original - eps
        minus = f()
        x[idx] = original
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic: Tensor, numeric: Tensor) -> float:
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def _eval_ctx(training: bool = False) -> L.ForwardContext:
    return L.ForwardContext(
        mode=L.TRAIN if training else L.EVAL,
        rng=np.random.default_rng(0),
        dropout=False,
        update_running_stats=False,
    )


def _check_layer(
    name: str,
    layer: L.Layer,
    x: Tensor,
    params: dict,
    buffers: dict,
    seed: int,
    training: bool = False,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GradCheckResult:
    rng = np.random.default_rng([seed, 7])
    out, _ = layer.forward(params, buffers, x, _eval_ctx(training))
    projection = rng.standard_normal(out.shape)

    def loss() -> float:
        value, _ = layer.forward(params, buffers, x, _eval_ctx(training))
        return float((value * projection).sum())

    _, cache = layer.forward(params, buffers, x, _eval_ctx(training))
    dx, grads = layer.backward(params, projection, cache)
    errors = [relative_error(dx, numeric_gradient(loss, x))]
    for pname, value in params.items():
        errors.append(relative_error(grads[pname], numeric_gradient(loss, value)))
    return GradCheckResult(name, seed, max(errors), tolerance)


def _away_from_zero(rng: np.random.Generator, shape: Sequence[int]) -> Tensor:
    values = rng.uniform(0.1, 1.0, size=shape)
    return values * rng.choice([-1.0, 1.0], size=shape)


def check_dense(seed: int) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    layer = L.Dense("dense", 4, 3)
    params = layer.init_params(rng, np.dtype(FLOAT64))
    params["bias"] = rng.standard_normal(3)
    return _check_layer("dense", layer, rng.standard_normal((5, 4)), params, {}, seed)


def check_conv(seed: int) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    layer = L.Conv2D("conv", 2, 3, 3)
    params = layer.init_params(rng, np.dtype(FLOAT64))
    params["bias"] = rng.standard_normal(3)
    return _check_layer("conv2d", layer, rng.standard_normal((2, 2, 5, 4)), params, {}, seed)


def _batchnorm_case(seed: int):
    rng = np.random.default_rng(seed)
    layer = L.BatchNorm("bn", 3)
    params = {"gamma": rng.uniform(0.5, 1.5, 3), "beta": rng.standard_normal(3)}
    buffers = {"running_mean": rng.standard_normal(3), "running_var": rng.uniform(0.5, 2.0, 3)}
    return rng, layer, params, buffers


def check_batchnorm_eval(seed: int) -> GradCheckResult:
    rng, layer, params, buffers = _batchnorm_case(seed)
    x = rng.standard_normal((4, 3, 3, 3))
    return _check_layer("batchnorm_eval", layer, x, params, buffers, seed)


def check_batchnorm_train(seed: int) -> GradCheckResult:
    rng, layer, params, buffers = _batchnorm_case(seed)
    x = rng.standard_normal((6, 3))
    return _check_layer("batchnorm_train", layer, x, params, buffers, seed, training=True)


def check_relu(seed: int) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    return _check_layer("relu", L.ReLU("relu"), _away_from_zero(rng, (4, 5)), {}, {}, seed)


def check_avgpool(seed: int) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 4, 5))
    return _check_layer("avgpool", L.GlobalAvgPool("pool"), x, {}, {}, seed)


def check_cross_entropy(seed: int) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((4, 5))
    labels = rng.integers(0, 5, size=4)
    _, analytic = cross_entropy_with_grad(logits, labels)
    numeric = numeric_gradient(lambda: cross_entropy_with_grad(logits, labels)[0], logits)
    return GradCheckResult("cross_entropy", seed, relative_error(analytic, numeric), DEFAULT_TOLERANCE)


def check_kd(seed: int) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    student = rng.standard_normal((3, 4))
    teacher = rng.standard_normal((3, 4))
    temperature = float(rng.choice([1.0, 2.0, 4.0]))
    _, analytic = kd_loss_with_grad(student, teacher, temperature)
    numeric = numeric_gradient(
        lambda: kd_loss_with_grad(student, teacher, temperature)[0], student
    )
    return GradCheckResult("kd", seed, relative_error(analytic, numeric), DEFAULT_TOLERANCE)


def _check_model(name: str, spec: BackboneSpec, batch: Tensor, seed: int, tolerance: float) -> GradCheckResult:
    rng = np.random.default_rng([seed, 11])
    model = build_model(spec, [(0, [0, 1, 2])], seed, FLOAT64)
    labels = rng.integers(0, 3, size=len(batch))
    teacher = rng.standard_normal((len(batch), 2))
    loss_spec = WeightedSum(
        [
            CrossEntropyTerm(labels),
            DistillationTerm(teacher, temperature=2.0, weight=0.5),
        ]
    )

    def loss() -> float:
        logits = model.heads[0].logits(backbone_forward(model, batch, L.EVAL).embedding)
        return loss_spec.value_and_grad(logits)[0]

    grads = backward(model, batch, 0, loss_spec, mode=L.EVAL, dropout=False)
    errors = []
    for pname, value in model.named_parameters():
        errors.append(relative_error(grads[pname], numeric_gradient(loss, value)))
    return GradCheckResult(name, seed, max(errors), tolerance)


def check_mlp(seed: int) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    spec = BackboneSpec(kind=MLP, input_shape=(4,), embedding_dim=5, hidden_sizes=[6, 5])
    return _check_model("mlp", spec, rng.standard_normal((3, 4)), seed, DEFAULT_TOLERANCE)


def check_convnet(seed: int) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    spec = BackboneSpec(
        kind=CONVNET,
        input_shape=(1, 4, 4),
        embedding_dim=2,
        conv_channels=[2, 2, 2, 2],
        kernel_size=3,
        dropout_rate=0.5,
    )
    return _check_model("convnet", spec, rng.standard_normal((2, 1, 4, 4)), seed, 1e-5)


CHECKS: List[Callable[[int], GradCheckResult]] = [
    check_dense,
    check_conv,
    check_batchnorm_eval,
    check_batchnorm_train,
    check_relu,
    check_avgpool,
    check_cross_entropy,
    check_kd,
    check_mlp,
    check_convnet,
]


def run_gradcheck_suite(seeds: Iterable[int] = DEFAULT_SEEDS) -> List[GradCheckResult]:
    start = time.perf_counter()
    results = [check(seed) for check in CHECKS for seed in seeds]
    failed = [r for r in results if not r.passed]
    logger.info(
        f"Gradient check: {len(results) - len(failed)}/{len(results)} passed in {time.perf_counter() - start:.2f}s"
    )
    for result in failed:
        logger.error(
            f"Gradient check failed: {result.name} seed={result.seed} rel_err={result.relative_error:.3e}"
        )
    return results
