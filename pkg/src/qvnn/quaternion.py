"""Quaternion scalars, plane-stored quaternion tensors and Hamilton-product algebra.

Quaternion-valued arrays are stored as *planes*: a real ndarray whose leading
axis has length 4 and holds the r, i, j, k components.  A quaternion matrix of
shape ``(m, n)`` is therefore a real array of shape ``(4, m, n)``.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionError


class Quaternion(NamedTuple):
    r: float
    i: float
    j: float
    k: float

    def __mul__(self, other):  # type: ignore[override]
        if isinstance(other, Quaternion):
            return hamilton_mul(self, other)
        return Quaternion(self.r * other, self.i * other, self.j * other, self.k * other)

    def __add__(self, other):  # type: ignore[override]
        return Quaternion(self.r + other[0], self.i + other[1], self.j + other[2], self.k + other[3])

    def __sub__(self, other):
        return Quaternion(self.r - other[0], self.i - other[1], self.j - other[2], self.k - other[3])

    def __neg__(self):
        return Quaternion(-self.r, -self.i, -self.j, -self.k)


ONE = Quaternion(1.0, 0.0, 0.0, 0.0)
I = Quaternion(0.0, 1.0, 0.0, 0.0)
J = Quaternion(0.0, 0.0, 1.0, 0.0)
K = Quaternion(0.0, 0.0, 0.0, 1.0)


class QTensor:
    """An n-dimensional array of quaternions held as four real planes.

    ``planes`` has shape ``(4, *shape)``; ``planes[0]`` is the real part.
    """

    __slots__ = ("planes",)

    def __init__(self, planes):
        planes = np.asarray(planes, dtype=np.float64)
        if planes.ndim < 1 or planes.shape[0] != 4:
            raise DimensionError(f"planes must have leading axis of length 4, got shape {planes.shape}")
        self.planes = planes

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "QTensor":
        return cls(np.zeros((4, *shape)))

    @classmethod
    def from_components(cls, r, i, j, k) -> "QTensor":
        return cls(np.stack([np.asarray(c, dtype=np.float64) for c in (r, i, j, k)]))

    @classmethod
    def from_quaternions(cls, items, shape=None) -> "QTensor":
        arr = np.asarray(items, dtype=np.float64).reshape(-1, 4).T
        shape = (arr.shape[1],) if shape is None else tuple(shape)
        return cls(arr.reshape((4, *shape)))

    @property
    def shape(self) -> tuple:
        return self.planes.shape[1:]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    r = property(lambda self: self.planes[0])
    i = property(lambda self: self.planes[1])
    j = property(lambda self: self.planes[2])
    k = property(lambda self: self.planes[3])

    def flat(self, n: int) -> Quaternion:
        """Quaternion at row-major flat index ``n``."""
        q = self.planes.reshape(4, -1)[:, n]
        return Quaternion(*(float(c) for c in q))

    def __getitem__(self, idx) -> "Quaternion | QTensor":
        idx = idx if isinstance(idx, tuple) else (idx,)
        sub = self.planes[(slice(None), *idx)]
        if sub.ndim == 1:
            return Quaternion(*(float(c) for c in sub))
        return QTensor(sub)

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        return f"QTensor(shape={self.shape})"


def _planes(x) -> np.ndarray:
    if isinstance(x, QTensor):
        return x.planes
    return np.asarray(x, dtype=np.float64)


def hamilton_mul(x, y):
    """Hamilton product ``x ⊗ y``.

    Works on :class:`Quaternion` scalars or on plane arrays (leading axis 4),
    broadcasting over the trailing axes.
    """
    xr, xi, xj, xk = _planes(x)
    yr, yi, yj, yk = _planes(y)
    zr = xr * yr - xi * yi - xj * yj - xk * yk
    zi = xr * yi + xi * yr + xj * yk - xk * yj
    zj = xr * yj - xi * yk + xj * yr + xk * yi
    zk = xr * yk + xi * yj - xj * yi + xk * yr
    if isinstance(x, Quaternion) and isinstance(y, Quaternion):
        return Quaternion(float(zr), float(zi), float(zj), float(zk))
    out = np.stack(np.broadcast_arrays(zr, zi, zj, zk))
    if isinstance(x, QTensor) or isinstance(y, QTensor):
        return QTensor(out)
    return out


def conjugate(x):
    if isinstance(x, Quaternion):
        return Quaternion(x.r, -x.i, -x.j, -x.k)
    p = _planes(x).copy()
    p[1:] *= -1.0
    return QTensor(p) if isinstance(x, QTensor) else p


def qnorm(x):
    """Euclidean norm of each quaternion; a float for scalars, an array otherwise."""
    p = _planes(x)
    n = np.sqrt(np.einsum("c...,c...->...", p, p))
    if isinstance(x, Quaternion):
        return float(n)
    return n


def qmatvec(W, h):
    """Quaternion matrix-vector product ``out[p] = sum_q W[p, q] ⊗ h[q]``."""
    Wp, hp = _planes(W), _planes(h)
    if Wp.ndim != 3 or hp.ndim != 2 or Wp.shape[2] != hp.shape[1]:
        raise DimensionError(
            f"qmatvec shape mismatch: W{tuple(Wp.shape[1:])} vs h{tuple(hp.shape[1:])}"
        )
    out = hamilton_mul(Wp, hp[:, None, :]).sum(axis=2)
    return QTensor(out) if isinstance(W, QTensor) or isinstance(h, QTensor) else out


def real_expand(W) -> np.ndarray:
    """Real ``4m x 4n`` matrix of the left-multiplication map ``h -> W ⊗ h``.

    Vectors are flattened quaternion by quaternion, ``[h0_r, h0_i, h0_j, h0_k, h1_r, ...]``.
    """
    Wp = _planes(W)
    if Wp.ndim != 3:
        raise DimensionError(f"real_expand needs a 2-D quaternion matrix, got shape {Wp.shape[1:]}")
    m, n = Wp.shape[1:]
    block = plane_block(Wp)  # plane-major ordering
    # plane-major (c*m + p) -> interleaved (p*4 + c)
    return block.reshape(4, m, 4, n).transpose(1, 0, 3, 2).reshape(4 * m, 4 * n)


_SRC = ((0, 1, 2, 3), (1, 0, 3, 2), (2, 3, 0, 1), (3, 2, 1, 0))
_SIGN = ((1.0, -1.0, -1.0, -1.0), (1.0, 1.0, -1.0, 1.0), (1.0, 1.0, 1.0, -1.0), (1.0, -1.0, 1.0, 1.0))


def plane_block(Wp: np.ndarray) -> np.ndarray:
    """Plane-major real expansion: rows ``[r; i; j; k]`` of outputs, columns ``[r; i; j; k]`` of inputs.

    ``plane_block(W) @ h.reshape(4 * n, ...)`` equals ``(W ⊗ h).reshape(4 * m, ...)``.
    """
    m, n = Wp.shape[1], Wp.shape[2]
    out = np.empty((4, m, 4, n))
    # row c of the output, column d of the input: sign * W[_SRC[c][d]]
    for c in range(4):
        for d in range(4):
            np.multiply(Wp[_SRC[c][d]], _SIGN[c][d], out=out[c, :, d, :])
    return out.reshape(4 * m, 4 * n)


def fold_block_grad(P: np.ndarray) -> np.ndarray:
    """Collapse the gradient of a plane block back onto the four weight planes.

    ``P`` is the ``(4m, 4n)`` gradient w.r.t. ``plane_block(W)``; returns ``(4, m, n)``.
    """
    m, n = P.shape[0] // 4, P.shape[1] // 4
    B = P.reshape(4, m, 4, n)
    b = lambda a, c: B[a, :, c, :]  # noqa: E731
    return np.stack([
        b(0, 0) + b(1, 1) + b(2, 2) + b(3, 3),
        -b(0, 1) + b(1, 0) - b(2, 3) + b(3, 2),
        -b(0, 2) + b(1, 3) + b(2, 0) - b(3, 1),
        -b(0, 3) - b(1, 2) + b(2, 1) + b(3, 0),
    ])


def qmatmul(Wp: np.ndarray, Xp: np.ndarray) -> np.ndarray:
    """Batched quaternion product ``W (4,m,n) ⊗ X (4,n,N) -> (4,m,N)`` through one real GEMM."""
    m = Wp.shape[1]
    N = Xp.shape[2]
    out = plane_block(Wp) @ Xp.reshape(-1, N)
    return out.reshape(4, m, N)


def qmatmul_backward(Wp: np.ndarray, Xp: np.ndarray, Gp: np.ndarray):
    """Gradients of ``qmatmul`` given upstream ``G (4,m,N)``: returns ``(dW, dX)``."""
    N = Xp.shape[2]
    G2 = Gp.reshape(-1, N)
    dX = (plane_block(Wp).T @ G2).reshape(Xp.shape)
    dW = fold_block_grad(G2 @ Xp.reshape(-1, N).T)
    return dW, dX
