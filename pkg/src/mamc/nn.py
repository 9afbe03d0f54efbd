"""Layer objects: parameters, initialization and batch-norm state.

Convolutions are bias-free (every conv here is followed by batch norm);
the fully-connected layers keep a bias.  Weights use fan-in-scaled normal
initialization, biases start at zero, batch-norm gamma at one and beta at
zero.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, avg_pool_w, conv2d, linear, max_pool_w, _node, _accumulate

__all__ = ["Parameter", "Conv2d", "BatchNorm2d", "Linear", "MaxPoolW", "AvgPoolW"]

_MODES = ("train", "eval")


def _check_mode(mode: str) -> None:
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")


class Parameter:
    """Trainable tensor together with its Adam moment accumulators."""

    def __init__(self, data: np.ndarray):
        self.tensor = Tensor(data, requires_grad=True)
        self.m = np.zeros_like(data)
        self.v = np.zeros_like(data)
        self.step_count = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        self.tensor.data = value

    @property
    def grad(self):
        return self.tensor.grad


def _fan_in_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    scale = math.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * scale).astype(dtype)


class Conv2d:
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: tuple[int, int],
        stride: tuple[int, int] = (1, 1),
        padding: tuple[int, int] = (0, 0),
        bias: bool = False,
        *,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        kh, kw = kernel
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(
            _fan_in_normal(
                rng, (out_channels, in_channels, kh, kw), in_channels * kh * kw, dtype
            )
        )
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        _check_mode(mode)
        b = self.bias.tensor if self.bias is not None else None
        return conv2d(x, self.weight.tensor, b, self.stride, self.padding)

    def named_parameters(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias

    def named_buffers(self, prefix: str):
        return iter(())


class BatchNorm2d:
    """Per-channel normalization over (batch, height, width).

    Train mode normalizes with batch statistics, differentiates through
    them, and folds the batch mean/variance into the running estimates.
    Eval mode uses the running estimates and refuses to run before any
    have been recorded.
    """

    def __init__(
        self,
        channels: int,
        momentum: float = 0.1,
        eps: float = 1e-5,
        *,
        dtype=np.float32,
    ):
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.num_batches = np.zeros(1, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        _check_mode(mode)
        batch, channels, height, width = x.data.shape
        n = batch * height * width
        gamma, beta = self.gamma.tensor, self.beta.tensor
        shape4 = x.data.shape
        br = (1, channels, 1)
        x3 = x.data.reshape(batch, channels, height * width)

        if mode == "train":
            if n < 2:
                raise ValueError("batch norm needs at least 2 values per channel")
            mean = x3.mean(axis=(0, 2))
            xhat = x3 - mean.reshape(br)
            var = np.einsum("bcw,bcw->c", xhat, xhat) / n
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat *= inv.reshape(br)

            unbiased = var * (n / (n - 1))
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (unbiased - self.running_var)
            self.num_batches += 1

            def backward(g):
                g3 = g.reshape(batch, channels, height * width)
                _accumulate(beta, g3.sum(axis=(0, 2)), owned=True)
                _accumulate(gamma, np.einsum("bcw,bcw->c", g3, xhat), owned=True)
                dx = g3 * gamma.data.reshape(br)
                m1 = dx.mean(axis=(0, 2))
                m2 = np.einsum("bcw,bcw->c", dx, xhat) / n
                dx -= m1.reshape(br)
                dx -= xhat * m2.reshape(br)
                dx *= inv.reshape(br)
                _accumulate(x, dx.reshape(shape4), owned=True)

        else:
            if self.num_batches[0] == 0:
                raise RuntimeError(
                    "batch norm used in eval mode before any training batch"
                )
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x3 - self.running_mean.reshape(br)) * inv.reshape(br)

            def backward(g):
                g3 = g.reshape(batch, channels, height * width)
                _accumulate(beta, g3.sum(axis=(0, 2)), owned=True)
                _accumulate(gamma, np.einsum("bcw,bcw->c", g3, xhat), owned=True)
                dx = g3 * (gamma.data * inv).reshape(br)
                _accumulate(x, dx.reshape(shape4), owned=True)

        out = gamma.data.reshape(br) * xhat
        out += beta.data.reshape(br)
        return _node(out.reshape(shape4), (x, gamma, beta), backward)

    def named_parameters(self, prefix: str):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def named_buffers(self, prefix: str):
        yield f"{prefix}.running_mean", self.running_mean
        yield f"{prefix}.running_var", self.running_var
        yield f"{prefix}.num_batches", self.num_batches


class Linear:
    def __init__(
        self,
        in_features: int,
        out_features: int,
        bias: bool = True,
        *,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        self.weight = Parameter(
            _fan_in_normal(rng, (out_features, in_features), in_features, dtype)
        )
        self.bias = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        _check_mode(mode)
        b = self.bias.tensor if self.bias is not None else None
        return linear(x, self.weight.tensor, b)

    def named_parameters(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias

    def named_buffers(self, prefix: str):
        return iter(())


class MaxPoolW:
    def __init__(self, kernel: int, stride: int, padding: int = 0):
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        return max_pool_w(x, self.kernel, self.stride, self.padding)


class AvgPoolW:
    def __init__(self, kernel: int, stride: int, padding: int = 0):
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        return avg_pool_w(x, self.kernel, self.stride, self.padding)
