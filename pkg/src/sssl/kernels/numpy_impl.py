"""Pure-numpy convolution and pooling kernels.

Fallback lane used when the compiled extension is unavailable (or when
``SSSL_KERNELS=python`` forces it). Convolutions are valid-mode (no
padding), matching the no-padding stance of the feature pipeline.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _window_view(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided (B, C, Ho, Wo, kh, kw) view over valid windows; no copy."""
    b, c, h, w = x.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    sb, sc, sh, sw = x.strides
    return as_strided(
        x,
        shape=(b, c, ho, wo, kh, kw),
        strides=(sb, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    """Valid cross-correlation: (B,C,H,W) * (O,C,kh,kw) -> (B,O,Ho,Wo)."""
    windows = _window_view(x, w.shape[2], w.shape[3], stride)
    y = np.einsum("bchwuv,ocuv->bohw", windows, w, optimize=True)
    return y + b[None, :, None, None]


def conv2d_backward(x: np.ndarray, w: np.ndarray, stride: int, dy: np.ndarray):
    """Gradients of conv2d_forward w.r.t. input, weights and bias."""
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = dy.shape[2], dy.shape[3]
    windows = _window_view(x, kh, kw, stride)
    dw = np.einsum("bchwuv,bohw->ocuv", windows, dy, optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    dx = np.zeros_like(x)
    # Scatter per kernel offset; each (u, v) hits a strided slab of dx.
    for u in range(kh):
        for v in range(kw):
            contrib = np.einsum("bohw,oc->bchw", dy, w[:, :, u, v], optimize=True)
            dx[:, :, u : u + ho * stride : stride, v : v + wo * stride : stride] += contrib
    return dx, dw, db


def maxpool_forward(x: np.ndarray, k: int):
    """Non-overlapping k x k max pooling; trailing rows/cols are dropped.

    Returns the pooled map and the flat within-window argmax (first max
    wins on ties, keeping backward deterministic).
    """
    b, c, h, w = x.shape
    ho, wo = h // k, w // k
    crop = x[:, :, : ho * k, : wo * k]
    win = crop.reshape(b, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, k * k)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, idx.astype(np.int64)


def maxpool_backward(dy: np.ndarray, idx: np.ndarray, x_shape, k: int) -> np.ndarray:
    """Routes each upstream gradient to the window element that won."""
    b, c, h, w = x_shape
    ho, wo = dy.shape[2], dy.shape[3]
    dwin = np.zeros((b, c, ho, wo, k * k), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, :, : ho * k, : wo * k] = (
        dwin.reshape(b, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * k, wo * k)
    )
    return dx
