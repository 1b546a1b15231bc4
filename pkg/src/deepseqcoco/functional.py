"""Forward kernels and their backward closures.

All image tensors are NHWC.  Convolutions loop over kernel offsets and do
one matmul (or elementwise product for depthwise) per offset, so the
summation order is fixed and results are bit-reproducible.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import DegenerateStatisticsError, ShapeError
from .tensor import Tensor, record

PADDINGS = ("same", "valid")


def conv_output_size(size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-size // stride)
    if padding == "valid":
        return (size - kernel) // stride + 1
    raise ValueError(f"padding must be one of {PADDINGS}, got {padding!r}")


def _pad_amounts(size: int, kernel: int, stride: int, padding: str) -> tuple[int, int]:
    # Same padding puts the odd extra pixel at the bottom/right.
    if padding == "valid":
        return 0, 0
    out = conv_output_size(size, kernel, stride, padding)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def _check_image(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected NHWC input, got shape {x.shape}")


def _geometry(x: Tensor, kh: int, kw: int, stride: int, padding: str, op: str):
    if stride < 1:
        raise ShapeError(f"{op}: stride must be >= 1, got {stride}")
    if padding not in PADDINGS:
        raise ValueError(f"{op}: padding must be one of {PADDINGS}, got {padding!r}")
    _, h, w, _ = x.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"{op}: input {x.shape} too small for {kh}x{kw} kernel with {padding} padding")
    pt, pb = _pad_amounts(h, kh, stride, padding)
    pl, pr = _pad_amounts(w, kw, stride, padding)
    return ho, wo, (pt, pb, pl, pr)


def _padded(arr: np.ndarray, pads) -> np.ndarray:
    pt, pb, pl, pr = pads
    if not any(pads):
        return arr
    return np.pad(arr, ((0, 0), (pt, pb), (pl, pr), (0, 0)))


def _window(xp: np.ndarray, i: int, j: int, ho: int, wo: int, s: int):
    return (slice(None), slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: str = "same") -> Tensor:
    """2-D convolution. ``kernel`` is (kh, kw, Cin, Cout)."""
    _check_image(x, "conv2d")
    if kernel.ndim != 4 or kernel.shape[2] != x.shape[3]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match kernel {kernel.shape}")
    n, h, w, _ = x.shape
    ho, wo, pads = _geometry(x, kh, kw, stride, padding, "conv2d")
    K = kernel.data

    if kh == 1 and kw == 1 and stride == 1:
        flat = x.data.reshape(-1, cin)
        out = (flat @ K[0, 0]).reshape(n, h, w, cout)
    else:
        xp = _padded(x.data, pads)
        out = np.zeros((n, ho, wo, cout), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                out += xp[_window(xp, i, j, ho, wo, stride)] @ K[i, j]
    if bias is not None:
        out += bias.data

    def backward(g):
        gb = g.sum(axis=(0, 1, 2)) if bias is not None else None
        g2 = g.reshape(-1, cout)
        if kh == 1 and kw == 1 and stride == 1:
            flat = x.data.reshape(-1, cin)
            gk = (flat.T @ g2).reshape(kernel.shape)
            gx = (g2 @ K[0, 0].T).reshape(x.shape)
            return gx, gk, gb
        xp = _padded(x.data, pads)
        gxp = np.zeros_like(xp)
        gk = np.empty_like(K)
        for i in range(kh):
            for j in range(kw):
                win = _window(xp, i, j, ho, wo, stride)
                gk[i, j] = xp[win].reshape(-1, cin).T @ g2
                gxp[win] += g @ K[i, j].T
        pt, _, pl, _ = pads
        gx = gxp[:, pt:pt + h, pl:pl + w, :]
        return gx, gk, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv2d", out, inputs, backward)


def depthwise_conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: str = "same",
                     bias: Optional[Tensor] = None) -> Tensor:
    """Per-channel convolution. ``kernel`` is (kh, kw, C)."""
    _check_image(x, "depthwise_conv2d")
    if kernel.ndim != 3 or kernel.shape[2] != x.shape[3]:
        raise ShapeError(f"depthwise_conv2d: input {x.shape} incompatible with kernel {kernel.shape}")
    kh, kw, c = kernel.shape
    if bias is not None and bias.shape != (c,):
        raise ShapeError(f"depthwise_conv2d: bias {bias.shape} does not match {c} channels")
    n, h, w, _ = x.shape
    ho, wo, pads = _geometry(x, kh, kw, stride, padding, "depthwise_conv2d")
    K = kernel.data
    xp = _padded(x.data, pads)
    out = np.zeros((n, ho, wo, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[_window(xp, i, j, ho, wo, stride)] * K[i, j]
    if bias is not None:
        out += bias.data

    def backward(g):
        gxp = np.zeros_like(xp)
        gk = np.empty_like(K)
        for i in range(kh):
            for j in range(kw):
                win = _window(xp, i, j, ho, wo, stride)
                gk[i, j] = (xp[win] * g).sum(axis=(0, 1, 2))
                gxp[win] += g * K[i, j]
        pt, _, pl, _ = pads
        gb = g.sum(axis=(0, 1, 2)) if bias is not None else None
        return gxp[:, pt:pt + h, pl:pl + w, :], gk, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("depthwise_conv2d", out, inputs, backward)


def global_avg_pool(x: Tensor) -> Tensor:
    _check_image(x, "global_avg_pool")
    n, h, w, c = x.shape
    out = x.data.mean(axis=(1, 2))

    def backward(g):
        return (np.broadcast_to(g[:, None, None, :] / (h * w), x.shape),)

    return record("global_avg_pool", out, (x,), backward)


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gb = g.sum(axis=0) if bias is not None else None
        return g @ weight.data.T, x.data.T @ g, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("dense", out, inputs, backward)


# --- activations -------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def relu6(x: Tensor) -> Tensor:
    mask = (x.data > 0) & (x.data < 6)
    return record("relu6", np.clip(x.data, 0, 6), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # tanh form never overflows
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return record("sigmoid", s, (x,), lambda g: (g * s * (1 - s),))


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, max-shifted for stability."""
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return record("softmax", p, (logits,), backward)


# --- elementwise / reductions ------------------------------------------------

def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return record("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, c: float) -> Tensor:
    return record("scale", x.data * c, (x,), lambda g: (g * c,))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return record("sum", np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    return record("mean", np.asarray(x.data.mean()), (x,), lambda g: (np.broadcast_to(g / n, x.shape),))


def scale_channels(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply each channel of an NHWC tensor by a per-sample gate of shape (N, C)."""
    _check_image(x, "scale_channels")
    if gate.shape != (x.shape[0], x.shape[3]):
        raise ShapeError(f"scale_channels: gate {gate.shape} does not match input {x.shape}")
    gb = gate.data[:, None, None, :]

    def backward(g):
        return g * gb, (g * x.data).sum(axis=(1, 2))

    return record("scale_channels", x.data * gb, (x, gate), backward)


# --- batch normalization -----------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: Tensor, running_var: Tensor,
               training: bool, momentum: float = 0.99, eps: float = 1e-3) -> Tensor:
    """Normalize over every axis but the last.

    In training mode batch statistics are used and the running statistics
    are updated in place as ``m * running + (1 - m) * batch``.
    """
    c = x.shape[-1]
    for name, t in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean),
                    ("running_var", running_var)):
        if t.shape != (c,):
            raise ShapeError(f"batch_norm: {name} {t.shape} does not match {c} channels")
    axes = tuple(range(x.ndim - 1))
    count = x.size // c

    if training:
        if count < 2:
            raise DegenerateStatisticsError(
                f"batch_norm: training statistics over {count} element per channel (input {x.shape})")
        mu = x.data.mean(axis=axes)
        centered = x.data - mu
        var = (centered * centered).mean(axis=axes)
        running_mean.data[...] = momentum * running_mean.data + (1 - momentum) * mu
        running_var.data[...] = momentum * running_var.data + (1 - momentum) * var
    else:
        centered = x.data - running_mean.data
        var = running_var.data
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data
        if training:
            gx = inv_std / count * (count * gxhat - gxhat.sum(axis=axes)
                                    - xhat * (gxhat * xhat).sum(axis=axes))
        else:
            gx = gxhat * inv_std
        return gx, ggamma, gbeta

    return record("batch_norm", out.astype(x.dtype, copy=False), (x, gamma, beta), backward)
