"""Differentiable operators.

Layout convention for 1-D signals is ``(batch, channels, time)``. Convolutions
never pad implicitly; use :func:`pad` / :func:`pad_circular` explicitly.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor, as_tensor, make_output


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


# ----------------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_output(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_output(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_output(out, (a, b), backward, "mul")


def absolute(x: Tensor) -> Tensor:
    out = np.abs(x.data)

    def backward(g):
        return (g * np.sign(x.data),)

    return make_output(out, (x,), backward, "abs")


def square(x: Tensor) -> Tensor:
    out = x.data * x.data

    def backward(g):
        return (2 * g * x.data,)

    return make_output(out, (x,), backward, "square")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)

    def backward(g):
        return (g * mask,)

    return make_output(out, (x,), backward, "relu")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # tanh form: stable for large |v| and a single transcendental call
    return 0.5 + 0.5 * np.tanh(0.5 * v)


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def backward(g):
        return (g * s * (1 - s),)

    return make_output(s, (x,), backward, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def backward(g):
        return (g * (1 - t * t),)

    return make_output(t, (x,), backward, "tanh")


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """PReLU with one learnable slope per channel (axis 1)."""
    if slope.ndim != 1 or slope.shape[0] != x.shape[1]:
        raise ValueError(f"slope shape {slope.shape} does not match {x.shape[1]} channels")
    a = slope.data.reshape((1, -1) + (1,) * (x.ndim - 2))
    pos = x.data >= 0
    out = np.where(pos, x.data, a * x.data)

    def backward(g):
        gx = np.where(pos, g, a * g)
        neg = np.where(pos, 0, g * x.data)
        axes = (0,) + tuple(range(2, x.ndim))
        return gx, neg.sum(axis=axes)

    return make_output(out, (x, slope), backward, "prelu")


def glu(x: Tensor, axis: int = 1) -> Tensor:
    """Gated linear unit: first half times sigmoid of second half along ``axis``."""
    c = x.shape[axis]
    if c % 2:
        raise ValueError(f"glu needs an even channel count, got {c}")
    value, gate = np.split(x.data, 2, axis=axis)
    s = _sigmoid(gate)
    out = value * s

    def backward(g):
        return (np.concatenate([g * s, g * value * s * (1 - s)], axis=axis),)

    return make_output(out, (x,), backward, "glu")


# ----------------------------------------------------------------------------
# reductions and shape ops
# ----------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def backward(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_output(out, (x,), backward, "sum")


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean(), dtype=x.dtype)

    def backward(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return make_output(out, (x,), backward, "mean")


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return make_output(out, (x,), backward, "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return make_output(out, (x,), backward, "transpose")


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_output(out, tensors, backward, "concat")


def time_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """``x[..., start:stop]`` on the last axis."""
    out = x.data[..., start:stop].copy()

    def backward(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return make_output(out, (x,), backward, "time_slice")


def pad(x: Tensor, left: int, right: int) -> Tensor:
    """Zero padding on the last axis."""
    widths = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    out = np.pad(x.data, widths)
    length = x.shape[-1]

    def backward(g):
        return (g[..., left:left + length].copy(),)

    return make_output(out, (x,), backward, "pad")


def pad_circular(x: Tensor, left: int, right: int) -> Tensor:
    """Periodic extension on the last axis (``left``/``right`` ≤ length)."""
    length = x.shape[-1]
    if left > length or right > length:
        raise ValueError("circular padding wider than the signal")
    parts = [x.data[..., length - left:], x.data, x.data[..., :right]] if left else \
        [x.data, x.data[..., :right]]
    out = np.concatenate(parts, axis=-1)

    def backward(g):
        gx = g[..., left:left + length].copy()
        if left:
            gx[..., length - left:] += g[..., :left]
        if right:
            gx[..., :right] += g[..., left + length:]
        return (gx,)

    return make_output(out, (x,), backward, "pad_circular")


def fold_circular(x: Tensor, overlap: int) -> Tensor:
    """Adjoint of right circular padding: add the trailing ``overlap`` samples onto the head."""
    length = x.shape[-1] - overlap
    out = x.data[..., :length].copy()
    out[..., :overlap] += x.data[..., length:]

    def backward(g):
        return (np.concatenate([g, g[..., :overlap]], axis=-1),)

    return make_output(out, (x,), backward, "fold_circular")


# ----------------------------------------------------------------------------
# convolutions
# ----------------------------------------------------------------------------

def conv_output_length(length: int, kernel: int, stride: int = 1, dilation: int = 1) -> int:
    span = (kernel - 1) * dilation + 1
    if length < span:
        raise ValueError(f"input length {length} shorter than kernel span {span}")
    return (length - span) // stride + 1


def _windows(x: np.ndarray, kernel: int, out_len: int, stride: int, dilation: int) -> np.ndarray:
    """Read-only ``(B, C, K, T_out)`` view with ``view[b,c,k,t] = x[b,c,t*stride + k*dilation]``."""
    x = np.ascontiguousarray(x)
    sb, sc, st = x.strides
    return as_strided(x, shape=(x.shape[0], x.shape[1], kernel, out_len),
                      strides=(sb, sc, dilation * st, stride * st), writeable=False)


def _scatter_windows(g_cols: np.ndarray, length: int, stride: int, dilation: int) -> np.ndarray:
    """Adjoint of :func:`_windows`: ``g_cols`` is ``(B, C, K, T_out)``."""
    b, c, kernel, out_len = g_cols.shape
    out = np.zeros((b, c, length), dtype=g_cols.dtype)
    stop = (out_len - 1) * stride + 1
    for k in range(kernel):
        out[:, :, k * dilation:k * dilation + stop:stride] += g_cols[:, :, k]
    return out


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           dilation: int = 1) -> Tensor:
    """Cross-correlation; ``weight`` is ``(C_out, C_in, K)``."""
    b, c_in, length = x.shape
    c_out, w_in, kernel = weight.shape
    if w_in != c_in:
        raise ValueError(f"conv1d channel mismatch: input has {c_in}, weight expects {w_in}")
    out_len = conv_output_length(length, kernel, stride, dilation)
    cols = _windows(x.data, kernel, out_len, stride, dilation).reshape(b, c_in * kernel, out_len)
    w2 = weight.data.reshape(c_out, c_in * kernel)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[:, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            g_cols = np.matmul(w2.T, g).reshape(b, c_in, kernel, out_len)
            gx = _scatter_windows(g_cols, length, stride, dilation)
        if weight.requires_grad:
            gw = np.einsum("bot,bjt->oj", g, cols, optimize=True).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return (gx, gw, gb)[:len(inputs)]

    return make_output(out, inputs, backward, "conv1d")


def conv_transpose1d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 1) -> Tensor:
    """Transposed convolution; ``weight`` is ``(C_in, C_out, K)``, output length ``(T-1)*stride + K``."""
    b, c_in, length = x.shape
    w_in, c_out, kernel = weight.shape
    if w_in != c_in:
        raise ValueError(f"conv_transpose1d channel mismatch: input has {c_in}, weight expects {w_in}")
    out_len = (length - 1) * stride + kernel
    w2 = weight.data.reshape(c_in, c_out * kernel)
    # z[b, (o,k), t] = sum_i w[i,o,k] x[b,i,t]
    z = np.matmul(w2.T, x.data).reshape(b, c_out, kernel, length)
    out = _scatter_windows(z, out_len, stride, 1)
    if bias is not None:
        out += bias.data[:, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = gw = gb = None
        cols = _windows(g, kernel, length, stride, 1).reshape(b, c_out * kernel, length)
        if x.requires_grad:
            gx = np.matmul(w2, cols)
        if weight.requires_grad:
            gw = np.einsum("bit,bjt->ij", x.data, cols, optimize=True).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return (gx, gw, gb)[:len(inputs)]

    return make_output(out, inputs, backward, "conv_transpose1d")


def depthwise_conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
                     dilation: int = 1) -> Tensor:
    """Per-channel convolution; ``weight`` is ``(C, 1, K)``."""
    b, c, length = x.shape
    if weight.shape[0] != c or weight.shape[1] != 1:
        raise ValueError(f"depthwise weight {weight.shape} incompatible with {c} channels")
    kernel = weight.shape[2]
    out_len = conv_output_length(length, kernel, stride, dilation)
    w = weight.data[:, 0, :]
    stop = (out_len - 1) * stride + 1
    taps = [x.data[:, :, k * dilation:k * dilation + stop:stride] for k in range(kernel)]
    out = taps[0] * w[:, 0:1]
    for k in range(1, kernel):
        out = out + taps[k] * w[:, k:k + 1]
    if bias is not None:
        out += bias.data[:, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.zeros(x.shape, dtype=g.dtype)
            for k in range(kernel):
                gx[:, :, k * dilation:k * dilation + stop:stride] += g * w[:, k:k + 1]
        if weight.requires_grad:
            gw = np.stack([np.einsum("bct,bct->c", g, taps[k]) for k in range(kernel)],
                          axis=1)[:, None, :]
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return (gx, gw, gb)[:len(inputs)]

    return make_output(out, inputs, backward, "depthwise_conv1d")


def pointwise_conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 convolution; ``weight`` is ``(C_out, C_in, 1)``."""
    c_out, c_in, kernel = weight.shape
    if kernel != 1:
        raise ValueError("pointwise_conv1d needs kernel size 1")
    if x.shape[1] != c_in:
        raise ValueError(f"pointwise channel mismatch: input has {x.shape[1]}, weight expects {c_in}")
    w = weight.data[:, :, 0]
    out = np.matmul(w, x.data)
    if bias is not None:
        out += bias.data[:, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.matmul(w.T, g)
        if weight.requires_grad:
            gw = np.einsum("bot,bit->oi", g, x.data, optimize=True)[:, :, None]
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return (gx, gw, gb)[:len(inputs)]

    return make_output(out, inputs, backward, "pointwise_conv1d")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map on the trailing axis; ``weight`` is ``(C_out, C_in)``."""
    c_out, c_in = weight.shape
    if x.shape[-1] != c_in:
        raise ValueError(f"linear dimension mismatch: input has {x.shape[-1]}, weight expects {c_in}")
    out = x.data @ weight.data.T
    if bias is not None:
        out += bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gx = g @ weight.data
        flat_g = g.reshape(-1, c_out)
        if weight.requires_grad:
            gw = flat_g.T @ x.data.reshape(-1, c_in)
        if bias is not None and bias.requires_grad:
            gb = flat_g.sum(axis=0)
        return (gx, gw, gb)[:len(inputs)]

    return make_output(out, inputs, backward, "linear")


def global_layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize each batch item jointly over channels and time, then per-channel affine."""
    axes = tuple(range(1, x.ndim))
    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    shape = (1, -1) + (1,) * (x.ndim - 2)
    gamma = gain.data.reshape(shape)
    out = xhat * gamma + bias.data.reshape(shape)

    def backward(g):
        reduce_axes = (0,) + tuple(range(2, x.ndim))
        g_gain = (g * xhat).sum(axis=reduce_axes)
        g_bias = g.sum(axis=reduce_axes)
        gxhat = g * gamma
        gx = inv_std * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        return gx, g_gain, g_bias

    return make_output(out, (x, gain, bias), backward, "global_layer_norm")


__all__ = [
    "add", "sub", "mul", "absolute", "square", "relu", "sigmoid", "tanh", "prelu", "glu",
    "sum_all", "mean_all", "reshape", "transpose", "concat", "time_slice", "pad",
    "pad_circular", "fold_circular", "conv_output_length", "conv1d", "conv_transpose1d",
    "depthwise_conv1d", "pointwise_conv1d", "linear", "global_layer_norm", "as_tensor",
]
