"""Convolution/pooling kernel backend selection.

The compiled Cython extension is preferred when importable; otherwise the
numpy implementation is used. ``SSSL_KERNELS=python`` (or ``numpy``)
forces the fallback, ``SSSL_KERNELS=cython`` makes a missing extension a
hard error. Both lanes expose the same four functions and agree
numerically (see tests and benchmarks/bench_kernels.py).
"""

import os

import numpy as np

from . import numpy_impl

_force = os.environ.get("SSSL_KERNELS", "").strip().lower()

if _force in ("python", "numpy"):
    _impl = numpy_impl
    BACKEND = "numpy"
else:
    try:
        from . import _convext as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _force == "cython":
            raise
        _impl = numpy_impl
        BACKEND = "numpy"


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, w, b, stride=1):
    return _impl.conv2d_forward(_c(x), _c(w), _c(b), int(stride))


def conv2d_backward(x, w, stride, dy):
    return _impl.conv2d_backward(_c(x), _c(w), int(stride), _c(dy))


def maxpool_forward(x, k):
    return _impl.maxpool_forward(_c(x), int(k))


def maxpool_backward(dy, idx, x_shape, k):
    return _impl.maxpool_backward(_c(dy), np.ascontiguousarray(idx, dtype=np.int64), tuple(x_shape), int(k))
