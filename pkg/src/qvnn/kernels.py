"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``QVNN_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("QVNN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        pass


def im2col(x, kh, kw, stride=1, pad=0):
    return _impl.im2col(np.ascontiguousarray(x, dtype=np.float64), kh, kw, stride, pad)


def col2im(cols, x_shape, kh, kw, stride=1, pad=0):
    return _impl.col2im(np.ascontiguousarray(cols, dtype=np.float64), tuple(x_shape), kh, kw, stride, pad)


def maxpool_forward(x, size=2):
    return _impl.maxpool_forward(np.ascontiguousarray(x, dtype=np.float64), size)


def maxpool_backward(g, arg, x_shape, size=2):
    return _impl.maxpool_backward(
        np.ascontiguousarray(g, dtype=np.float64), np.ascontiguousarray(arg, dtype=np.int64), tuple(x_shape), size
    )
