# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_kernels_py``; same signatures and results."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(double[:, :, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t B = x.shape[1], C = x.shape[2], H = x.shape[3], W = x.shape[4]
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t K = C * kh * kw, N = B * Ho * Wo
    out_arr = np.zeros((4, K, N))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t q, c, dy, dx, b, oy, ox, iy, ix, row, col, lo, hi
    with nogil:
        for q in range(4):
            for c in range(C):
                for dy in range(kh):
                    for dx in range(kw):
                        row = (c * kh + dy) * kw + dx
                        # output columns whose input column lies inside the image
                        lo = (pad - dx + stride - 1) // stride if pad > dx else 0
                        hi = (W - 1 + pad - dx) // stride + 1
                        if hi > Wo:
                            hi = Wo
                        for b in range(B):
                            for oy in range(Ho):
                                iy = oy * stride + dy - pad
                                if iy < 0 or iy >= H:
                                    continue
                                col = (b * Ho + oy) * Wo
                                for ox in range(lo, hi):
                                    ix = ox * stride + dx - pad
                                    out[q, row, col + ox] = x[q, b, c, iy, ix]
    return out_arr


def col2im(double[:, :, ::1] cols, tuple x_shape, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t B = x_shape[1], C = x_shape[2], H = x_shape[3], W = x_shape[4]
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    out_arr = np.zeros((4, B, C, H, W))
    cdef double[:, :, :, :, ::1] out = out_arr
    cdef Py_ssize_t q, c, dy, dx, b, oy, ox, iy, ix, row, col, lo, hi
    with nogil:
        for q in range(4):
            for c in range(C):
                for dy in range(kh):
                    for dx in range(kw):
                        row = (c * kh + dy) * kw + dx
                        # output columns whose input column lies inside the image
                        lo = (pad - dx + stride - 1) // stride if pad > dx else 0
                        hi = (W - 1 + pad - dx) // stride + 1
                        if hi > Wo:
                            hi = Wo
                        for b in range(B):
                            for oy in range(Ho):
                                iy = oy * stride + dy - pad
                                if iy < 0 or iy >= H:
                                    continue
                                col = (b * Ho + oy) * Wo
                                for ox in range(lo, hi):
                                    ix = ox * stride + dx - pad
                                    out[q, b, c, iy, ix] += cols[q, row, col + ox]
    return out_arr


def maxpool_forward(double[:, :, :, :, ::1] x, int size):
    cdef Py_ssize_t B = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t H2 = x.shape[3] // size, W2 = x.shape[4] // size
    out_arr = np.empty((4, B, C, H2, W2))
    arg_arr = np.empty((B, C, H2, W2), dtype=np.int64)
    cdef double[:, :, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, c, oy, ox, dy, dx, by, bx, iy, ix
    cdef double best, n2, v
    cdef cnp.int64_t besti
    with nogil:
        for b in range(B):
            for c in range(C):
                for oy in range(H2):
                    for ox in range(W2):
                        best = -1.0
                        besti = 0
                        by = oy * size
                        bx = ox * size
                        for dy in range(size):
                            for dx in range(size):
                                iy = oy * size + dy
                                ix = ox * size + dx
                                v = x[0, b, c, iy, ix]
                                n2 = v * v
                                v = x[1, b, c, iy, ix]
                                n2 = n2 + v * v
                                v = x[2, b, c, iy, ix]
                                n2 = n2 + v * v
                                v = x[3, b, c, iy, ix]
                                n2 = n2 + v * v
                                if n2 > best:
                                    best = n2
                                    besti = dy * size + dx
                                    by = iy
                                    bx = ix
                        arg[b, c, oy, ox] = besti
                        out[0, b, c, oy, ox] = x[0, b, c, by, bx]
                        out[1, b, c, oy, ox] = x[1, b, c, by, bx]
                        out[2, b, c, oy, ox] = x[2, b, c, by, bx]
                        out[3, b, c, oy, ox] = x[3, b, c, by, bx]
    return out_arr, arg_arr


def maxpool_backward(double[:, :, :, :, ::1] g, cnp.int64_t[:, :, :, ::1] arg, tuple x_shape, int size):
    cdef Py_ssize_t B = g.shape[1], C = g.shape[2], H2 = g.shape[3], W2 = g.shape[4]
    out_arr = np.zeros(x_shape)
    cdef double[:, :, :, :, ::1] out = out_arr
    cdef Py_ssize_t q, b, c, oy, ox, iy, ix
    cdef cnp.int64_t a
    with nogil:
        for b in range(B):
            for c in range(C):
                for oy in range(H2):
                    for ox in range(W2):
                        a = arg[b, c, oy, ox]
                        iy = oy * size + a // size
                        ix = ox * size + a % size
                        for q in range(4):
                            out[q, b, c, iy, ix] = g[q, b, c, oy, ox]
    return out_arr
