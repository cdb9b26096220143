"""Differentiable numpy primitives with explicit backward passes.

Every ``op(...)`` returns ``(output, cache)`` and ``op_backward(grad, cache)``
returns the input gradient followed by parameter gradients. Image-like
tensors are channel-last: (batch, time, freq, channels).
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

__all__ = [
    "conv2d",
    "conv2d_backward",
    "maxpool_freq",
    "maxpool_freq_backward",
    "linear",
    "linear_backward",
    "layer_norm",
    "layer_norm_backward",
    "relu",
    "relu_backward",
    "sigmoid",
    "sigmoid_backward",
    "softmax",
    "softmax_backward",
    "glorot_uniform",
    "finite_diff_gradient",
]

LN_EPS = 1e-5


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# -- convolution ------------------------------------------------------------


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """3x3 convolution with zero "same" padding.

    x: (B, N, F, C_in); w: (C_out, C_in, 3, 3); b: (C_out,). Output keeps the
    spatial size. No activation is applied.
    """
    if x.ndim != 4:
        raise ValueError(f"conv2d expects (batch, time, freq, channels), got {x.shape}")
    c_out, c_in, kh, kw = w.shape
    if (kh, kw) != (3, 3):
        raise ValueError(f"only 3x3 kernels are supported, got {kh}x{kw}")
    if x.shape[-1] != c_in:
        raise ValueError(f"input has {x.shape[-1]} channels, kernel expects {c_in}")
    bsz, n, f, _ = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    cols = win.reshape(bsz * n * f, c_in * 9)
    out = cols @ w.reshape(c_out, -1).T + b
    return out.reshape(bsz, n, f, c_out), (x.shape, cols, w)


def conv2d_backward(grad: np.ndarray, cache):
    (bsz, n, f, c_in), cols, w = cache
    c_out = w.shape[0]
    g = grad.reshape(-1, c_out)
    dw = (g.T @ cols).reshape(w.shape)
    db = g.sum(axis=0)
    dcols = (g @ w.reshape(c_out, -1)).reshape(bsz, n, f, c_in, 3, 3)
    dxp = np.zeros((bsz, n + 2, f + 2, c_in), dtype=grad.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, i : i + n, j : j + f, :] += dcols[..., i, j]
    return dxp[:, 1:-1, 1:-1, :], dw, db


# -- pooling ----------------------------------------------------------------


def maxpool_freq(x: np.ndarray, k: int):
    """Non-overlapping max pooling of size (1, k) along the frequency axis.

    Trailing frequency bins that do not fill a window are dropped.
    """
    if k < 1:
        raise ValueError("pool size must be >= 1")
    bsz, n, f, c = x.shape
    if k > f:
        raise ValueError(f"pool size {k} exceeds frequency dimension {f}")
    fo = f // k
    xr = x[:, :, : fo * k, :].reshape(bsz, n, fo, k, c)
    idx = np.argmax(xr, axis=3)  # first occurrence on ties
    out = np.take_along_axis(xr, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return out, (x.shape, k, idx)


def maxpool_freq_backward(grad: np.ndarray, cache):
    (bsz, n, f, c), k, idx = cache
    fo = f // k
    dxr = np.zeros((bsz, n, fo, k, c), dtype=grad.dtype)
    np.put_along_axis(dxr, idx[:, :, :, None, :], grad[:, :, :, None, :], axis=3)
    dx = np.zeros((bsz, n, f, c), dtype=grad.dtype)
    dx[:, :, : fo * k, :] = dxr.reshape(bsz, n, fo * k, c)
    return dx


# -- dense ------------------------------------------------------------------


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Affine map over the last axis; w has shape (out, in)."""
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight input dim {w.shape[1]}")
    return x @ w.T + b, (x, w)


def linear_backward(grad: np.ndarray, cache):
    x, w = cache
    g2 = grad.reshape(-1, grad.shape[-1])
    dw = g2.T @ x.reshape(-1, x.shape[-1])
    db = g2.sum(axis=0)
    return grad @ w, dw, db


def layer_norm(x: np.ndarray, gain: np.ndarray, offset: np.ndarray, eps: float = LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * gain + offset, (xhat, inv, gain)


def layer_norm_backward(grad: np.ndarray, cache):
    xhat, inv, gain = cache
    axes = tuple(range(grad.ndim - 1))
    dgain = (grad * xhat).sum(axis=axes)
    doffset = grad.sum(axis=axes)
    dxhat = grad * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, doffset


# -- activations --------------------------------------------------------------


def relu(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad: np.ndarray, mask):
    return grad * mask


def sigmoid(x: np.ndarray):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, out


def sigmoid_backward(grad: np.ndarray, out):
    return grad * out * (1.0 - out)


def softmax(x: np.ndarray, axis: int = -1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)
    return out, (out, axis)


def softmax_backward(grad: np.ndarray, cache):
    out, axis = cache
    return out * (grad - (grad * out).sum(axis=axis, keepdims=True))


# -- gradient oracle ----------------------------------------------------------


def finite_diff_gradient(
    fn: Callable[[], float] | Callable[[np.ndarray], float],
    params: np.ndarray | Mapping[str, np.ndarray],
    eps: float = 1e-5,
):
    """Central-difference gradient of a scalar function.

    With an array ``params`` the function is called as ``fn(params)``. With a
    mapping of arrays, ``fn()`` is called with no arguments and is expected to
    read the arrays, which are perturbed in place and restored afterwards.
    Returns an array (or dict of arrays) shaped like ``params``.
    """
    if isinstance(params, np.ndarray):
        return _fd_array(lambda: fn(params), params, eps)
    return {name: _fd_array(fn, arr, eps) for name, arr in params.items()}


def _fd_array(fn, arr: np.ndarray, eps: float) -> np.ndarray:
    if not arr.flags.c_contiguous:
        raise ValueError("finite differences need C-contiguous parameter arrays")
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = float(fn())
        flat[i] = old - eps
        fm = float(fn())
        flat[i] = old
        g[i] = (fp - fm) / (2.0 * eps)
    return grad
