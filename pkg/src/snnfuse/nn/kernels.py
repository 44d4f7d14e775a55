"""Dense kernels with hand-written backward passes.

Every ``*_fwd`` returns ``(out, cache)``; the matching ``*_bwd`` consumes the
upstream gradient and the cache. Inputs are batched NCHW (or N x features)
arrays; the time axis is folded into N by the callers.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _check_conv(x, w):
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d expects NCHW input and OIHW weights")
    if w.shape[2:] != (3, 3):
        raise ValueError("only 3x3 kernels are supported")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"shape mismatch: input has {x.shape[1]} channels, weights expect {w.shape[1]}")


def _im2col(x):
    n, c, h, w_ = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # n, c, h, w, 3, 3
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w_, c * 9)


def conv2d_fwd(x, w, b=None):
    """3x3 cross-correlation, stride 1, zero padding 1."""
    _check_conv(x, w)
    n, _, h, w_ = x.shape
    cout = w.shape[0]
    cols = _im2col(x)
    y = cols @ w.reshape(cout, -1).T
    if b is not None:
        y += b
    y = y.reshape(n, h, w_, cout).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y), (cols, x.shape, w)


def conv2d_bwd(gy, cache):
    cols, xshape, w = cache
    n, c, h, w_ = xshape
    cout = w.shape[0]
    g2 = gy.transpose(0, 2, 3, 1).reshape(-1, cout)
    gw = (g2.T @ cols).reshape(w.shape)
    gb = g2.sum(axis=0)
    gcols = (g2 @ w.reshape(cout, -1)).reshape(n, h, w_, c, 3, 3)
    gxp = np.zeros((n, c, h + 2, w_ + 2), dtype=gy.dtype)
    for i in range(3):
        for j in range(3):
            gxp[:, :, i:i + h, j:j + w_] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return gxp[:, :, 1:-1, 1:-1], gw, gb


def maxpool2_fwd(x):
    """2x2 max pooling with stride 2; odd edges are padded with -inf."""
    n, c, h, w = x.shape
    ph, pw = h % 2, w % 2
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
    h2, w2 = x.shape[2] // 2, x.shape[3] // 2
    win = x.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = win.argmax(axis=-1)  # first occurrence on ties
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, (idx, (n, c, h, w), (h2, w2))


def maxpool2_bwd(gy, cache):
    idx, (n, c, h, w), (h2, w2) = cache
    g4 = np.zeros((n, c, h2, w2, 4), dtype=gy.dtype)
    np.put_along_axis(g4, idx[..., None], gy[..., None], axis=-1)
    g = g4.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
    return g[:, :, :h, :w]


def batchnorm_fwd(x, gamma, beta, running_mean, running_var, training: bool, momentum: float = 0.1, eps: float = 1e-5):
    """Per-channel normalisation of an NCHW array.

    In training mode statistics pool every sample and pixel of N (which holds
    batch x time); ``running_mean``/``running_var`` are updated in place.
    """
    axes = (0, 2, 3)
    m = x.shape[0] * x.shape[2] * x.shape[3]
    if training:
        if m < 2:
            raise ValueError("batch normalisation needs at least 2 values per channel in training mode")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return y.astype(x.dtype, copy=False), (xhat, inv, gamma, training)


def batchnorm_bwd(gy, cache):
    xhat, inv, gamma, training = cache
    axes = (0, 2, 3)
    ggamma = (gy * xhat).sum(axis=axes)
    gbeta = gy.sum(axis=axes)
    if not training:
        return gy * (gamma * inv)[None, :, None, None], ggamma, gbeta
    m = gy.shape[0] * gy.shape[2] * gy.shape[3]
    gxhat = gy * gamma[None, :, None, None]
    gx = (inv / m)[None, :, None, None] * (
        m * gxhat - gxhat.sum(axis=axes)[None, :, None, None] - xhat * (gxhat * xhat).sum(axis=axes)[None, :, None, None]
    )
    return gx, ggamma, gbeta


def linear_fwd(x, w, b=None):
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"shape mismatch: input width {x.shape[-1]}, weights expect {w.shape[1]}")
    y = x @ w.T
    if b is not None:
        y += b
    return y, (x, w)


def linear_bwd(gy, cache):
    x, w = cache
    return gy @ w, gy.T @ x, gy.sum(axis=0)


def dropout_fwd(x, rate: float, training: bool, rng: np.random.Generator | None):
    """Inverted dropout; a fresh mask for every element of every timestep."""
    if not training or rate == 0.0:
        return x, None
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


def dropout_bwd(gy, mask):
    return gy if mask is None else gy * mask


def voting_fwd(spikes, n_classes: int):
    """Average contiguous groups of the last axis: N outputs -> C class scores."""
    n = spikes.shape[-1]
    if n % n_classes:
        raise ValueError(f"output width {n} is not a multiple of class count {n_classes}")
    return spikes.reshape(*spikes.shape[:-1], n_classes, n // n_classes).mean(axis=-1)


def voting_bwd(gy, n: int):
    c = gy.shape[-1]
    return np.repeat(gy / (n // c), n // c, axis=-1)
