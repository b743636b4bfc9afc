"""Pure-numpy implementations of the hot kernels.

These are the reference versions; ``_ckernels`` must agree with them exactly.
All arrays are float64 plane arrays with a leading axis of length 4.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, stride, pad):
    """``x (4,B,C,H,W) -> cols (4, C*kh*kw, B*Ho*Wo)``."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(3, 4))[:, :, :, ::stride, ::stride]
    _, B, C, Ho, Wo = win.shape[:5]
    return np.ascontiguousarray(win.transpose(0, 2, 5, 6, 1, 3, 4)).reshape(4, C * kh * kw, B * Ho * Wo)


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add columns back to ``(4,B,C,H,W)``."""
    _, B, C, H, W = x_shape
    Hp, Wp = H + 2 * pad, W + 2 * pad
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    c6 = cols.reshape(4, C, kh, kw, B, Ho, Wo)
    out = np.zeros((4, B, C, Hp, Wp))
    for dy in range(kh):
        for dx in range(kw):
            out[:, :, :, dy:dy + stride * (Ho - 1) + 1:stride, dx:dx + stride * (Wo - 1) + 1:stride] += (
                c6[:, :, dy, dx].transpose(0, 2, 1, 3, 4)
            )
    if pad:
        out = out[:, :, :, pad:pad + H, pad:pad + W]
    return np.ascontiguousarray(out)


def _windows(a, size, H2, W2):
    # (..., H, W) -> (..., H2, W2, size*size), window elements in row-major order
    lead = a.shape[:-2]
    a = a[..., :H2 * size, :W2 * size].reshape(*lead, H2, size, W2, size)
    nd = len(lead)
    perm = tuple(range(nd)) + (nd, nd + 2, nd + 1, nd + 3)
    return a.transpose(perm).reshape(*lead, H2, W2, size * size)


def maxpool_forward(x, size):
    """Norm-argmax pooling over non-overlapping ``size x size`` windows.

    Returns ``(out (4,B,C,H2,W2), argmax (B,C,H2,W2) int64)``; ties go to the
    first element in row-major window order.
    """
    H2, W2 = x.shape[3] // size, x.shape[4] // size
    n2 = np.einsum("cbhij,cbhij->bhij", x, x)
    arg = _windows(n2, size, H2, W2).argmax(axis=-1)
    xw = _windows(x, size, H2, W2)
    out = np.take_along_axis(xw, np.broadcast_to(arg[None, ..., None], (4, *arg.shape, 1)), axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool_backward(g, arg, x_shape, size):
    _, B, C, H, W = x_shape
    H2, W2 = arg.shape[2], arg.shape[3]
    dw = np.zeros((4, B, C, H2, W2, size * size))
    np.put_along_axis(dw, np.broadcast_to(arg[None, ..., None], (4, *arg.shape, 1)), g[..., None], axis=-1)
    dw = dw.reshape(4, B, C, H2, W2, size, size).transpose(0, 1, 2, 3, 5, 4, 6)
    out = np.zeros(x_shape)
    out[:, :, :, :H2 * size, :W2 * size] = dw.reshape(4, B, C, H2 * size, W2 * size)
    return out
