"""Dense-tensor reverse-mode differentiation on numpy arrays.

Each operation records its inputs and a closure that pushes the upstream
gradient to them; ``Tensor.backward`` replays those closures in reverse
execution order (iterative topological sort, so deep networks don't hit
the recursion limit).  Gradients accumulate into ``.grad`` of tensors
with ``requires_grad`` set.  Operations preserve the input dtype:
training runs in float32, gradient checking in float64.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "add",
    "mul",
    "matmul",
    "reshape",
    "tensor_sum",
    "amax",
    "stack",
    "maximum",
    "tanh",
    "relu",
    "conv2d",
    "max_pool_w",
    "avg_pool_w",
    "linear",
    "softmax",
    "cross_entropy",
    "softmax_cross_entropy",
]

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference paths)."""
    global _GRAD_ENABLED
    saved = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = saved


class Tensor:
    """N-d real array with an optional gradient and graph linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._prev: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Backpropagate from a scalar output through the recorded graph."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _node(data, inputs: tuple, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._prev = inputs
        out._backward = backward
    return out


def _accumulate(t: Tensor, grad: np.ndarray, owned: bool = False) -> None:
    """Add ``grad`` into ``t.grad``.

    ``owned=True`` promises the caller hands over a freshly allocated array
    that aliases nothing else, letting the first accumulation skip a copy.
    """
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = grad if owned else grad.copy()
    else:
        t.grad += grad


def _sum_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g):
        ga = _sum_to(g, a.data.shape)
        _accumulate(a, ga, owned=ga is not g)
        gb = _sum_to(g, b.data.shape)
        _accumulate(b, gb, owned=gb is not g)

    return _node(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, _sum_to(g * b.data, a.data.shape), owned=True)
        _accumulate(b, _sum_to(g * a.data, b.data.shape), owned=True)

    return _node(out_data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-d tensors")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"matmul: inner dimensions {a.data.shape[1]} and {b.data.shape[0]} differ"
        )
    out_data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T, owned=True)
        _accumulate(b, a.data.T @ g, owned=True)

    return _node(out_data, (a, b), backward)


def reshape(t: Tensor, shape: tuple) -> Tensor:
    in_shape = t.data.shape
    out_data = t.data.reshape(shape)

    def backward(g):
        _accumulate(t, g.reshape(in_shape))

    return _node(out_data, (t,), backward)


def tensor_sum(t: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out_data = t.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(t, np.broadcast_to(g, t.data.shape).copy(), owned=True)

    return _node(out_data, (t,), backward)


def amax(t: Tensor, axis: int) -> Tensor:
    """Maximum along an axis, routing the gradient to the first argmax."""
    idx = t.data.argmax(axis=axis)
    expanded = np.expand_dims(idx, axis)
    out_data = np.take_along_axis(t.data, expanded, axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(t.data)
        np.put_along_axis(full, expanded, np.expand_dims(g, axis), axis=axis)
        _accumulate(t, full, owned=True)

    return _node(out_data, (t,), backward)


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    shapes = {t.data.shape for t in tensors}
    if len(shapes) != 1:
        raise ValueError(f"stack: mismatched shapes {sorted(shapes)}")
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        parts = np.split(g, len(tensors), axis=axis)
        for t, part in zip(tensors, parts):
            _accumulate(t, part.squeeze(axis))

    return _node(out_data, tuple(tensors), backward)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise maximum; ties send the gradient to the first operand."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"maximum: shape mismatch {a.data.shape} vs {b.data.shape}")
    take_a = a.data >= b.data
    out_data = np.where(take_a, a.data, b.data)

    def backward(g):
        _accumulate(a, g * take_a, owned=True)
        _accumulate(b, g * ~take_a, owned=True)

    return _node(out_data, (a, b), backward)


def tanh(t: Tensor) -> Tensor:
    out_data = np.tanh(t.data)

    def backward(g):
        _accumulate(t, g * (1.0 - out_data**2), owned=True)

    return _node(out_data, (t,), backward)


def relu(t: Tensor) -> Tensor:
    out_data = np.maximum(t.data, 0)

    def backward(g):
        _accumulate(t, g * (t.data > 0), owned=True)

    return _node(out_data, (t,), backward)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
) -> Tensor:
    """Cross-correlation of [B, C_in, H, W] with [C_out, C_in, kH, kW]."""
    batch, c_in, h, w = x.data.shape
    c_out, c_in_w, kh, kw = weight.data.shape
    if c_in != c_in_w:
        raise ValueError(
            f"conv2d: input has {c_in} channels but weight expects {c_in_w}"
        )
    sh, sw = stride
    ph, pw = padding
    if h + 2 * ph < kh:
        raise ValueError(f"conv2d: kernel height {kh} exceeds padded height {h + 2 * ph}")
    if w + 2 * pw < kw:
        raise ValueError(f"conv2d: kernel width {kw} exceeds padded width {w + 2 * pw}")
    h_out = (h + 2 * ph - kh) // sh + 1
    w_out = (w + 2 * pw - kw) // sw + 1

    # Kernel-offset ranges clipped to the unpadded input, so no padded
    # copy of the input or its gradient is ever materialized.
    def _ranges(kernel, pad, size, stride, out_size):
        spans = []
        for off in range(kernel):
            lo = max(0, -((off - pad) // stride) if off < pad else 0)
            hi = min(out_size - 1, (size - 1 + pad - off) // stride)
            spans.append((off, lo, hi, off + stride * lo - pad))
        return spans

    h_spans = _ranges(kh, ph, h, sh, h_out)
    w_spans = _ranges(kw, pw, w, sw, w_out)

    # im2col in [B, C_in*kH*kW, H'*W'] layout so the forward and both
    # backward products are plain batched matmuls with no transposes.
    k = c_in * kh * kw
    if ph or pw:
        cols = np.zeros((batch, k, h_out * w_out), dtype=x.data.dtype)
    else:
        cols = np.empty((batch, k, h_out * w_out), dtype=x.data.dtype)
    cols_v = cols.reshape(batch, c_in, kh, kw, h_out, w_out)
    for u, h0, h1, i0 in h_spans:
        if h1 < h0:
            continue
        for v, w0, w1, j0 in w_spans:
            if w1 < w0:
                continue
            cols_v[:, :, u, v, h0 : h1 + 1, w0 : w1 + 1] = x.data[
                :,
                :,
                i0 : i0 + sh * (h1 - h0) + 1 : sh,
                j0 : j0 + sw * (w1 - w0) + 1 : sw,
            ]
    w_mat = weight.data.reshape(c_out, k)

    out_data = np.matmul(w_mat, cols).reshape(batch, c_out, h_out, w_out)
    if bias is not None:
        out_data += bias.data.reshape(1, c_out, 1, 1)

    def backward(g):
        g3 = g.reshape(batch, c_out, h_out * w_out)
        if bias is not None:
            _accumulate(bias, g3.sum(axis=(0, 2)), owned=True)
        dw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0)
        _accumulate(weight, dw.reshape(weight.data.shape), owned=True)
        if x.requires_grad:
            dcols = np.matmul(w_mat.T, g3)
            dcols_v = dcols.reshape(batch, c_in, kh, kw, h_out, w_out)
            dx = np.zeros_like(x.data)
            for u, h0, h1, i0 in h_spans:
                if h1 < h0:
                    continue
                for v, w0, w1, j0 in w_spans:
                    if w1 < w0:
                        continue
                    dx[
                        :,
                        :,
                        i0 : i0 + sh * (h1 - h0) + 1 : sh,
                        j0 : j0 + sw * (w1 - w0) + 1 : sw,
                    ] += dcols_v[:, :, u, v, h0 : h1 + 1, w0 : w1 + 1]
            _accumulate(x, dx, owned=True)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _node(out_data, inputs, backward)


def _pool_windows(data: np.ndarray, kernel: int, stride: int, w_out: int):
    batch, channels, height, _ = data.shape
    windows = np.empty(
        (batch, channels, height, w_out, kernel), dtype=data.dtype
    )
    for v in range(kernel):
        windows[..., v] = data[:, :, :, v : v + stride * w_out : stride]
    return windows


def _check_pool(w: int, kernel: int, stride: int, padding: int) -> int:
    if kernel > w + 2 * padding:
        raise ValueError(
            f"pool window {kernel} exceeds padded width {w + 2 * padding}"
        )
    return (w + 2 * padding - kernel) // stride + 1


def max_pool_w(t: Tensor, kernel: int, stride: int, padding: int = 0) -> Tensor:
    """Max pooling along the width axis of [B, C, H, W]; the gradient goes
    to the first maximal element of each window."""
    batch, channels, height, w = t.data.shape
    w_out = _check_pool(w, kernel, stride, padding)
    if padding:
        xp = np.pad(
            t.data,
            ((0, 0), (0, 0), (0, 0), (padding, padding)),
            constant_values=-np.inf,
        )
    else:
        xp = t.data
    windows = _pool_windows(xp, kernel, stride, w_out)
    idx = windows.argmax(axis=-1)
    out_data = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        dxp = np.zeros((batch, channels, height, w + 2 * padding), dtype=g.dtype)
        for v in range(kernel):
            dxp[:, :, :, v : v + stride * w_out : stride] += g * (idx == v)
        _accumulate(
            t, dxp[:, :, :, padding : padding + w] if padding else dxp, owned=True
        )

    return _node(out_data, (t,), backward)


def avg_pool_w(t: Tensor, kernel: int, stride: int, padding: int = 0) -> Tensor:
    """Average pooling along the width axis; padding zeros count toward the
    mean (the divisor is always ``kernel``)."""
    batch, channels, height, w = t.data.shape
    w_out = _check_pool(w, kernel, stride, padding)
    xp = (
        np.pad(t.data, ((0, 0), (0, 0), (0, 0), (padding, padding)))
        if padding
        else t.data
    )
    windows = _pool_windows(xp, kernel, stride, w_out)
    out_data = windows.mean(axis=-1)

    def backward(g):
        share = g / kernel
        dxp = np.zeros((batch, channels, height, w + 2 * padding), dtype=g.dtype)
        for v in range(kernel):
            dxp[:, :, :, v : v + stride * w_out : stride] += share
        _accumulate(
            t, dxp[:, :, :, padding : padding + w] if padding else dxp, owned=True
        )

    return _node(out_data, (t,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map of [B, D] by weight [K, D] and bias [K]."""
    if x.data.ndim != 2:
        raise ValueError(f"linear: expected 2-d input, got shape {x.data.shape}")
    if x.data.shape[1] != weight.data.shape[1]:
        raise ValueError(
            f"linear: input features {x.data.shape[1]} != weight features "
            f"{weight.data.shape[1]}"
        )
    out_data = x.data @ weight.data.T
    if bias is not None:
        out_data = out_data + bias.data

    def backward(g):
        _accumulate(x, g @ weight.data, owned=True)
        _accumulate(weight, g.T @ x.data, owned=True)
        if bias is not None:
            _accumulate(bias, g.sum(axis=0), owned=True)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _node(out_data, inputs, backward)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out_data = exp / exp.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(t, out_data * (g - inner), owned=True)

    return _node(out_data, (t,), backward)


def cross_entropy(
    probs: Tensor, labels: np.ndarray, floor: float = 1e-12
) -> Tensor:
    """Mean negative log probability of the true class.

    Expects rows of probabilities summing to 1 (checked to 1e-6).  The
    probability picked at the true label is clamped at ``floor`` before the
    log, and the gradient uses the clamped value.
    """
    labels = np.asarray(labels)
    row_sums = probs.data.sum(axis=1)
    if not np.allclose(row_sums, 1.0, atol=1e-6):
        raise ValueError("cross_entropy: rows must sum to 1 within 1e-6")
    batch = probs.data.shape[0]
    picked = probs.data[np.arange(batch), labels]
    clamped = np.maximum(picked, floor)
    out_data = np.asarray(-np.log(clamped).mean(), dtype=probs.data.dtype)

    def backward(g):
        dp = np.zeros_like(probs.data)
        dp[np.arange(batch), labels] = -g / (batch * clamped)
        _accumulate(probs, dp, owned=True)

    return _node(out_data, (probs,), backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Fused softmax + cross-entropy on logits [B, K]; numerically stable,
    with the classic (softmax - onehot) / B adjoint."""
    labels = np.asarray(labels)
    batch = logits.data.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    out_data = np.asarray(
        -log_probs[np.arange(batch), labels].mean(), dtype=logits.data.dtype
    )

    def backward(g):
        grad = np.exp(log_probs)
        grad[np.arange(batch), labels] -= 1.0
        _accumulate(logits, grad * (g / batch), owned=True)

    return _node(out_data, (logits,), backward)
