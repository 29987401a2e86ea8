"""Layer primitives with explicit forward and backward rules.

Each layer is stateless: parameters and batch-norm buffers live in the
model's dictionaries and are passed in by name. ``forward`` returns the
output together with a cache that ``backward`` consumes.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor

logger = logging.getLogger(__name__)

TRAIN = "train"
EVAL = "eval"

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class ForwardContext:
    """Per-call switches for a forward pass."""

    mode: str
    rng: np.random.Generator
    dropout: bool = True
    update_running_stats: bool = True

    @property
    def training(self) -> bool:
        return self.mode == TRAIN


class Layer:
    param_names: Tuple[str, ...] = ()
    buffer_names: Tuple[str, ...] = ()

    def __init__(self, name: str) -> None:
        self.name = name

    def init_params(
        self, rng: np.random.Generator, dtype: np.dtype
    ) -> Dict[str, Tensor]:
        return {}

    def init_buffers(self, dtype: np.dtype) -> Dict[str, Tensor]:
        return {}

    def forward(
        self,
        params: Dict[str, Tensor],
        buffers: Dict[str, Tensor],
        x: Tensor,
        ctx: ForwardContext,
    ) -> Tuple[Tensor, Any]:
        raise NotImplementedError

    def backward(
        self, params: Dict[str, Tensor], dout: Tensor, cache: Any
    ) -> Tuple[Tensor, Dict[str, Tensor]]:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name})"


def he_uniform(
    rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, dtype: np.dtype
) -> Tensor:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Flatten(Layer):
    def forward(self, params, buffers, x, ctx):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, dout, cache):
        return dout.reshape(cache), {}


class Dense(Layer):
    param_names = ("weight", "bias")

    def __init__(self, name: str, in_features: int, out_features: int) -> None:
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features

    def init_params(self, rng, dtype):
        return {
            "weight": he_uniform(
                rng, (self.in_features, self.out_features), self.in_features, dtype
            ),
            "bias": np.zeros(self.out_features, dtype=dtype),
        }

    def forward(self, params, buffers, x, ctx):
        return x @ params["weight"] + params["bias"], x

    def backward(self, params, dout, cache):
        x = cache
        grads = {"weight": x.T @ dout, "bias": dout.sum(axis=0)}
        return dout @ params["weight"].T, grads


class Conv2D(Layer):
    """Stride-1 convolution with 'same' zero padding."""

    param_names = ("weight", "bias")

    def __init__(
        self, name: str, in_channels: int, out_channels: int, kernel_size: int
    ) -> None:
        super().__init__(name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        total = kernel_size - 1
        self.pad_before = total // 2
        self.pad_after = total - self.pad_before

    def init_params(self, rng, dtype):
        k = self.kernel_size
        fan_in = self.in_channels * k * k
        return {
            "weight": he_uniform(
                rng, (self.out_channels, self.in_channels, k, k), fan_in, dtype
            ),
            "bias": np.zeros(self.out_channels, dtype=dtype),
        }

    def _pad(self, x: Tensor) -> Tensor:
        pads = (self.pad_before, self.pad_after)
        return np.pad(x, ((0, 0), (0, 0), pads, pads))

    def forward(self, params, buffers, x, ctx):
        k = self.kernel_size
        windows = sliding_window_view(self._pad(x), (k, k), axis=(2, 3))
        out = np.einsum("nchwij,fcij->nfhw", windows, params["weight"], optimize=True)
        out += params["bias"][None, :, None, None]
        return out, (x.shape, windows)

    def backward(self, params, dout, cache):
        x_shape, windows = cache
        k = self.kernel_size
        _, _, height, width = x_shape
        weight = params["weight"]
        grads = {
            "weight": np.einsum("nchwij,nfhw->fcij", windows, dout, optimize=True),
            "bias": dout.sum(axis=(0, 2, 3)),
        }
        padded_shape = (
            x_shape[0],
            x_shape[1],
            height + k - 1,
            width + k - 1,
        )
        dx_padded = np.zeros(padded_shape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dx_padded[:, :, i : i + height, j : j + width] += np.einsum(
                    "nfhw,fc->nchw", dout, weight[:, :, i, j], optimize=True
                )
        dx = dx_padded[
            :,
            :,
            self.pad_before : self.pad_before + height,
            self.pad_before : self.pad_before + width,
        ]
        return dx, grads


class BatchNorm(Layer):
    """Batch normalization over axis 1 for 2-D or 4-D inputs."""

    param_names = ("gamma", "beta")
    buffer_names = ("running_mean", "running_var")

    def __init__(self, name: str, num_features: int) -> None:
        super().__init__(name)
        self.num_features = num_features

    def init_params(self, rng, dtype):
        return {
            "gamma": np.ones(self.num_features, dtype=dtype),
            "beta": np.zeros(self.num_features, dtype=dtype),
        }

    def init_buffers(self, dtype):
        return {
            "running_mean": np.zeros(self.num_features, dtype=dtype),
            "running_var": np.ones(self.num_features, dtype=dtype),
        }

    @staticmethod
    def _axes(x: Tensor) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
        if x.ndim == 4:
            return (0, 2, 3), (1, -1, 1, 1)
        return (0,), (1, -1)

    def forward(self, params, buffers, x, ctx):
        axes, shape = self._axes(x)
        gamma = params["gamma"].reshape(shape)
        beta = params["beta"].reshape(shape)
        if ctx.training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            if ctx.update_running_stats:
                running_mean = buffers["running_mean"]
                running_var = buffers["running_var"]
                running_mean *= 1.0 - BN_MOMENTUM
                running_mean += BN_MOMENTUM * mean
                running_var *= 1.0 - BN_MOMENTUM
                running_var += BN_MOMENTUM * var
        else:
            mean = buffers["running_mean"]
            var = buffers["running_var"]
        inv_std = (1.0 / np.sqrt(var + BN_EPS)).astype(x.dtype)
        x_hat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
        return gamma * x_hat + beta, (x_hat, inv_std, ctx.training, axes, shape)

    def backward(self, params, dout, cache):
        x_hat, inv_std, training, axes, shape = cache
        grads = {
            "gamma": (dout * x_hat).sum(axis=axes),
            "beta": dout.sum(axis=axes),
        }
        dx_hat = dout * params["gamma"].reshape(shape)
        inv_std = inv_std.reshape(shape)
        if not training:
            return dx_hat * inv_std, grads
        count = dout.size // dout.shape[1]
        dx = (inv_std / count) * (
            count * dx_hat
            - dx_hat.sum(axis=axes, keepdims=True)
            - x_hat * (dx_hat * x_hat).sum(axis=axes, keepdims=True)
        )
        return dx, grads


class ReLU(Layer):
    def forward(self, params, buffers, x, ctx):
        mask = x > 0
        return x * mask, mask

    def backward(self, params, dout, cache):
        return dout * cache, {}


class Dropout(Layer):
    """Inverted dropout; masks come from the model generator in train mode."""

    def __init__(self, name: str, rate: float) -> None:
        super().__init__(name)
        self.rate = rate

    def forward(self, params, buffers, x, ctx):
        if not (ctx.training and ctx.dropout) or self.rate <= 0.0:
            return x, None
        if self.rate >= 1.0:
            mask = np.zeros_like(x)
        else:
            keep = ctx.rng.random(x.shape) >= self.rate
            mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        return x * mask, mask

    def backward(self, params, dout, cache):
        if cache is None:
            return dout, {}
        return dout * cache, {}


class GlobalAvgPool(Layer):
    """Spatial average over H and W, producing one value per channel."""

    def forward(self, params, buffers, x, ctx):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, params, dout, cache):
        n, c, height, width = cache
        scale = dout.dtype.type(1.0 / (height * width))
        dx = np.broadcast_to(
            (dout * scale)[:, :, None, None], (n, c, height, width)
        ).copy()
        return dx, {}
