"""Differentiable layer primitives: convolutions, batch norm, activations, losses."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import kernels
from .tensor import DomainError, ShapeError, Tensor


def _out_extent(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _check_conv_args(x: Tensor, w: Tensor, in_axis: int, stride: int, padding: int, name: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name}: input must be NCHW, got shape {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"{name}: weight must have a square kernel, got shape {w.shape}")
    if x.shape[1] != w.shape[in_axis]:
        raise ShapeError(f"{name}: input has {x.shape[1]} channels but weight expects {w.shape[in_axis]}")
    if stride < 1:
        raise DomainError(f"{name}: stride must be >= 1, got {stride}")
    if padding < 0:
        raise DomainError(f"{name}: padding must be >= 0, got {padding}")


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``weight`` is (out, in, k, k)."""
    _check_conv_args(x, weight, 1, stride, padding, "conv2d")
    n, c, h, w = x.shape
    o, _, k, _ = weight.shape
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {o} output channels")
    oh, ow = _out_extent(h, k, stride, padding), _out_extent(w, k, stride, padding)
    if oh <= 0 or ow <= 0:
        raise DomainError(f"conv2d: kernel {k} with padding {padding} does not fit a {h}x{w} input")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = kernels.im2col(xp, k, stride, oh, ow)
    wmat = weight.data.reshape(o, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, o, oh, ow)

    def backward(g):
        g2 = g.reshape(n, o, oh * ow)
        gx = gw = gb = None
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g2)
            dxp = kernels.col2im(dcols, xp.shape, k, stride, oh, ow)
            gx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        if weight.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, backward, "conv2d")


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Transposed convolution, the adjoint of :func:`conv2d`. ``weight`` is (in, out, k, k)."""
    _check_conv_args(x, weight, 0, stride, padding, "conv_transpose2d")
    if not 0 <= output_padding < stride:
        raise DomainError(f"conv_transpose2d: output_padding must lie in [0, stride), got {output_padding}")
    n, i, h, w = x.shape
    _, o, k, _ = weight.shape
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv_transpose2d: bias shape {bias.shape} does not match {o} output channels")
    oh = (h - 1) * stride - 2 * padding + k + output_padding
    ow = (w - 1) * stride - 2 * padding + k + output_padding
    if oh <= 0 or ow <= 0:
        raise DomainError(f"conv_transpose2d: padding {padding} leaves an empty output")
    full = (n, o, oh + 2 * padding, ow + 2 * padding)

    wmat = weight.data.reshape(i, -1)
    xm = x.data.reshape(n, i, h * w)
    cols = np.matmul(wmat.T, xm)
    out_full = kernels.col2im(cols, full, k, stride, h, w)
    out = out_full[:, :, padding : padding + oh, padding : padding + ow] if padding else out_full
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        if padding:
            gp = np.zeros(full, dtype=g.dtype)
            gp[:, :, padding : padding + oh, padding : padding + ow] = g
        else:
            gp = g
        dcols = kernels.im2col(gp, k, stride, h, w)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.matmul(wmat, dcols).reshape(x.shape)
        if weight.requires_grad:
            gw = np.tensordot(xm, dcols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, backward, "conv_transpose2d")


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
    update_stats: bool = True,
) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    In training mode the batch statistics normalize the input and, unless
    ``update_stats`` is False, are folded into the running buffers in place
    (unbiased variance, exponential moving average with ``momentum``).
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm2d: input must be NCHW, got shape {x.shape}")
    c = x.shape[1]
    for name, arr in (("gamma", gamma.data), ("beta", beta.data), ("running_mean", running_mean), ("running_var", running_var)):
        if arr.shape != (c,):
            raise ShapeError(f"batch_norm2d: {name} has shape {arr.shape}, expected ({c},)")
    axes = (0, 2, 3)
    shape = (1, c, 1, 1)

    if training:
        if x.shape[0] < 2:
            raise DomainError("batch_norm2d: training mode needs a batch of at least 2 samples")
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.data.mean(axis=axes)
        centered = x.data - mean.reshape(shape)
        var = (centered * centered).mean(axis=axes)
        if update_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var * (m / max(m - 1, 1))
    else:
        m = None
        mean, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
        centered = x.data - mean.reshape(shape)

    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centered * inv_std.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward(g):
        gx = ggamma = gbeta = None
        if gamma.requires_grad:
            ggamma = (g * xhat).sum(axis=axes)
        if beta.requires_grad:
            gbeta = g.sum(axis=axes)
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(shape)
            if training:
                s1 = dxhat.sum(axis=axes).reshape(shape)
                s2 = (dxhat * xhat).sum(axis=axes).reshape(shape)
                gx = (inv_std.reshape(shape) / m) * (m * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * inv_std.reshape(shape)
        return gx, ggamma, gbeta

    return Tensor._result(out, (x, gamma, beta), backward, "batch_norm2d")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data >= 0
    scale = np.where(mask, 1.0, slope).astype(x.dtype)
    return Tensor._result(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def relu(x: Tensor) -> Tensor:
    mask = (x.data > 0).astype(x.dtype)
    return Tensor._result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def tanh_act(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor._result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype)


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, clipped to the open interval (0, 1) of the dtype."""
    lo = np.finfo(x.dtype).tiny
    hi = np.nextafter(np.array(1.0, dtype=x.dtype), np.array(0.0, dtype=x.dtype))
    y = np.clip(_stable_sigmoid(x.data), lo, hi)
    out = Tensor._result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")
    out._logits = x
    return out


def fully_connected(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ weight + bias`` with ``weight`` of shape (in, out)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"fully_connected: cannot apply weight {weight.shape} to input {x.shape}")
    out = x.data @ weight.data
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"fully_connected: bias shape {bias.shape} does not match {weight.shape[1]} units")
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.T @ g if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, backward, "fully_connected")


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping average pooling (stride == kernel), floor mode."""
    n, c, h, w = x.shape
    oh, ow = h // k, w // k
    if oh == 0 or ow == 0:
        raise DomainError(f"avg_pool2d: kernel {k} does not fit a {h}x{w} input")
    win = x.data[:, :, : oh * k, : ow * k].reshape(n, c, oh, k, ow, k)
    out = win.mean(axis=(3, 5))

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        spread = np.repeat(np.repeat(g / (k * k), k, axis=2), k, axis=3)
        gx[:, :, : oh * k, : ow * k] = spread
        return (gx,)

    return Tensor._result(out, (x,), backward, "avg_pool2d")


def bce_loss(predictions: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy of probabilities against 0/1 targets.

    When ``predictions`` came straight out of :func:`sigmoid`, the loss is
    evaluated on the logits with the softplus identity and the gradient goes
    to the logits directly, so saturated scores stay finite.
    """
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=predictions.dtype)
    if t.shape != predictions.shape:
        t = np.broadcast_to(t, predictions.shape)
    count = predictions.size
    if count == 0:
        raise DomainError("bce_loss: empty batch")

    logits = predictions._logits
    if logits is not None:
        z = logits.data.astype(np.float64)
        per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
        value = np.asarray(per.mean(), dtype=predictions.dtype)
        p = _stable_sigmoid(logits.data)

        def backward(g):
            return ((g * (p - t) / count).astype(logits.dtype),)

        return Tensor._result(value, (logits,), backward, "bce_logits")

    eps = 1e-7 if predictions.dtype == np.float32 else 1e-12
    y = np.clip(predictions.data.astype(np.float64), eps, 1.0 - eps)
    per = -(t * np.log(y) + (1.0 - t) * np.log1p(-y))
    value = np.asarray(per.mean(), dtype=predictions.dtype)

    def backward(g):
        d = -(t / y - (1.0 - t) / (1.0 - y)) / count
        return ((g * d).astype(predictions.dtype),)

    return Tensor._result(value, (predictions,), backward, "bce")


def mse_loss(generated: Tensor, target) -> Tensor:
    """Squared L2 distance per image, averaged over the batch (leading axis)."""
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=generated.dtype)
    if t.shape != generated.shape:
        raise ShapeError(f"mse_loss: shapes differ, {generated.shape} vs {t.shape}")
    n = generated.shape[0] if generated.ndim else 1
    diff = generated.data - t
    value = np.asarray(np.square(diff.astype(np.float64)).sum() / n, dtype=generated.dtype)

    def backward(g):
        return (g * (2.0 / n) * diff,)

    return Tensor._result(value, (generated,), backward, "mse")
