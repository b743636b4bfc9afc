"""Quaternion network layers with explicit forward and backward passes.

Activations are plane arrays: ``(4, B, n)`` after dense layers and
``(4, B, C, H, W)`` for convolutional feature maps.  Every layer exposes

* ``forward(x, training, rng) -> (out, cache)``
* ``backward(dout, cache) -> (dx, grads)``

where ``grads`` maps parameter names to arrays shaped like ``params()``.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError
from .quaternion import QTensor, qmatmul, qmatmul_backward


def _as_planes(x) -> np.ndarray:
    return x.planes if isinstance(x, QTensor) else np.asarray(x, dtype=np.float64)


def init_quaternion_weights(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform in ``[-s, s]`` per component with ``s = sqrt(3 / (4 fan_in))``.

    Each quaternion weight then has expected squared norm ``1 / fan_in``.
    """
    s = np.sqrt(3.0 / (4.0 * fan_in))
    return rng.uniform(-s, s, size=(4, *shape))


class Layer:
    tag = 0
    has_params = False

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, dout, cache):
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def copy(self):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class QDense(Layer):
    """Fully connected quaternion layer computing ``W ⊗ h + b`` (pre-activation)."""

    tag = 1
    has_params = True

    def __init__(self, in_features, out_features, rng=None, W=None, b=None, bias=True):
        self.use_bias = bool(bias)
        if W is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            W = init_quaternion_weights(rng, (out_features, in_features), in_features)
        self.W = np.ascontiguousarray(W, dtype=np.float64)
        self.b = np.zeros((4, out_features)) if b is None else np.ascontiguousarray(b, dtype=np.float64)
        if self.W.shape != (4, out_features, in_features) or self.b.shape != (4, out_features):
            raise DimensionError(f"QDense parameter shapes W{self.W.shape} b{self.b.shape} inconsistent")

    @property
    def in_features(self):
        return self.W.shape[2]

    @property
    def out_features(self):
        return self.W.shape[1]

    def params(self):
        return {"W": self.W, "b": self.b} if self.use_bias else {"W": self.W}

    def forward(self, x, training=False, rng=None):
        x = _as_planes(x)
        single = x.ndim == 2
        B = 1 if single else x.shape[1]
        X = x.reshape(4, B, -1)
        if X.shape[2] != self.in_features:
            raise DimensionError(
                f"QDense expects {self.in_features} input quaternions, got input shape {x.shape[1:]}"
            )
        Xt = np.ascontiguousarray(X.transpose(0, 2, 1))
        out = qmatmul(self.W, Xt) + self.b[:, :, None]
        out = out.transpose(0, 2, 1)
        if single:
            out = out[:, 0]
        return np.ascontiguousarray(out), (Xt, x.shape)

    def backward(self, dout, cache):
        Xt, in_shape = cache
        G = np.ascontiguousarray(dout.reshape(4, Xt.shape[2], -1).transpose(0, 2, 1))
        dW, dXt = qmatmul_backward(self.W, Xt, G)
        db = G.sum(axis=2)
        dx = dXt.transpose(0, 2, 1).reshape(in_shape)
        grads = {"W": dW, "b": db} if self.use_bias else {"W": dW}
        return dx, grads

    def copy(self):
        return QDense(self.in_features, self.out_features, W=self.W.copy(), b=self.b.copy(), bias=self.use_bias)

    def __repr__(self):
        return f"QDense({self.in_features} -> {self.out_features})"


class QConv2d(Layer):
    """2-D quaternion convolution: sliding sums of Hamilton products with zero padding.

    With ``bias=False`` the bias array is kept (pruning folds constants into
    it) but is not exposed as a trainable parameter.
    """

    tag = 2
    has_params = True

    def __init__(
        self, in_channels, out_channels, kernel_size=3, stride=1, padding=0, rng=None, W=None, b=None, bias=True
    ):
        self.use_bias = bool(bias)
        kh, kw = (kernel_size, kernel_size) if np.isscalar(kernel_size) else tuple(kernel_size)
        if kh < 1 or kw < 1 or stride < 1 or padding < 0:
            raise ContractError("kernel extents and stride must be >= 1, padding >= 0")
        if W is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            W = init_quaternion_weights(rng, (out_channels, in_channels, kh, kw), in_channels * kh * kw)
        self.W = np.ascontiguousarray(W, dtype=np.float64)
        self.b = np.zeros((4, out_channels)) if b is None else np.ascontiguousarray(b, dtype=np.float64)
        self.stride = int(stride)
        self.padding = int(padding)
        if self.W.shape != (4, out_channels, in_channels, kh, kw) or self.b.shape != (4, out_channels):
            raise DimensionError(f"QConv2d parameter shapes W{self.W.shape} b{self.b.shape} inconsistent")

    @property
    def in_channels(self):
        return self.W.shape[2]

    @property
    def out_channels(self):
        return self.W.shape[1]

    @property
    def kernel_size(self):
        return self.W.shape[3], self.W.shape[4]

    def params(self):
        return {"W": self.W, "b": self.b} if self.use_bias else {"W": self.W}

    def output_hw(self, H, W):
        kh, kw = self.kernel_size
        Hp, Wp = H + 2 * self.padding, W + 2 * self.padding
        if kh > Hp or kw > Wp:
            raise DimensionError(f"kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
        return (Hp - kh) // self.stride + 1, (Wp - kw) // self.stride + 1

    def forward(self, x, training=False, rng=None):
        x = _as_planes(x)
        single = x.ndim == 4
        if single:
            x = x[:, None]
        if x.ndim != 5 or x.shape[2] != self.in_channels:
            raise DimensionError(
                f"QConv2d expects (4, B, {self.in_channels}, H, W) input, got {x.shape}"
            )
        B, _, H, W = x.shape[1:]
        Ho, Wo = self.output_hw(H, W)
        kh, kw = self.kernel_size
        cols = kernels.im2col(x, kh, kw, self.stride, self.padding)
        O = self.out_channels
        out = qmatmul(self.W.reshape(4, O, -1), cols) + self.b[:, :, None]
        out = np.ascontiguousarray(out.reshape(4, O, B, Ho, Wo).transpose(0, 2, 1, 3, 4))
        if single:
            out = out[:, 0]
        return out, (cols, x.shape, single)

    def backward(self, dout, cache):
        cols, x_shape, single = cache
        if single:
            dout = dout[:, None]
        O = self.out_channels
        G = np.ascontiguousarray(dout.transpose(0, 2, 1, 3, 4)).reshape(4, O, -1)
        dW, dcols = qmatmul_backward(self.W.reshape(4, O, -1), cols, G)
        kh, kw = self.kernel_size
        dx = kernels.col2im(dcols, x_shape, kh, kw, self.stride, self.padding)
        if single:
            dx = dx[:, 0]
        grads = {"W": dW.reshape(self.W.shape)}
        if self.use_bias:
            grads["b"] = G.sum(axis=2)
        return dx, grads

    def copy(self):
        return QConv2d(
            self.in_channels, self.out_channels, self.kernel_size, self.stride, self.padding,
            W=self.W.copy(), b=self.b.copy(), bias=self.use_bias,
        )

    def __repr__(self):
        kh, kw = self.kernel_size
        return f"QConv2d({self.in_channels} -> {self.out_channels}, {kh}x{kw}, stride={self.stride}, pad={self.padding})"


class QBatchNorm(Layer):
    """Quaternion batch normalization with a real scale per channel.

    Per channel the batch mean is a quaternion and the variance is the mean
    squared quaternion norm of the centred values.  Channels live on axis 2 of
    the plane array; statistics pool over batch and any spatial axes.
    """

    tag = 3
    has_params = True

    def __init__(self, channels, eps=1e-5, momentum=0.9, gamma=None, beta=None, running_mean=None, running_var=None):
        if not 0.0 < momentum < 1.0:
            raise ContractError(f"momentum must lie in (0, 1), got {momentum}")
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.gamma = np.ones(channels) if gamma is None else np.asarray(gamma, dtype=np.float64).copy()
        self.beta = np.zeros((4, channels)) if beta is None else np.asarray(beta, dtype=np.float64).copy()
        self.running_mean = np.zeros((4, channels)) if running_mean is None else np.asarray(running_mean, dtype=np.float64).copy()
        self.running_var = np.ones(channels) if running_var is None else np.asarray(running_var, dtype=np.float64).copy()
        self.track_running_stats = True

    @property
    def channels(self):
        return self.gamma.shape[0]

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def _bshape(self, x):
        # broadcast shape of a per-channel quantity against x (4,B,C,...)
        return (1, 1, self.channels) + (1,) * (x.ndim - 3)

    def forward(self, x, training=False, rng=None):
        x = _as_planes(x)
        if x.ndim < 3 or x.shape[2] != self.channels:
            raise DimensionError(f"QBatchNorm({self.channels}) got input shape {x.shape}")
        axes = (1,) + tuple(range(3, x.ndim))
        bs = self._bshape(x)
        if training:
            if x.shape[1] < 1:
                raise ContractError("training-mode batch norm needs a batch of at least one sample")
            mu = x.mean(axis=axes)  # (4, C)
            xc = x - mu.reshape((4,) + bs[1:])
            var = (xc * xc).sum(axis=0).mean(axis=tuple(a - 1 for a in axes))  # (C,)
            if self.track_running_stats:
                m = self.momentum
                self.running_mean = m * self.running_mean + (1 - m) * mu
                self.running_var = m * self.running_var + (1 - m) * var
        else:
            mu, var = self.running_mean, self.running_var
            xc = x - mu.reshape((4,) + bs[1:])
        inv = 1.0 / np.sqrt(var + self.eps)
        y = np.multiply(xc, inv.reshape(bs), out=xc)
        out = y * self.gamma.reshape(bs)
        out += self.beta.reshape((4,) + bs[1:])
        return out, (y, inv, axes, training)

    def backward(self, dout, cache):
        y, inv, axes, training = cache
        bs = self._bshape(y)
        dbeta = dout.sum(axis=axes)
        dgamma = (dout * y).sum(axis=(0,) + axes)
        dy = dout * self.gamma.reshape(bs)
        if not training:
            return dy * inv.reshape(bs), {"gamma": dgamma, "beta": dbeta}
        red = tuple(a - 1 for a in axes)
        dy_mean = dy.mean(axis=axes, keepdims=True)
        proj = (dy * y).sum(axis=0).mean(axis=red)  # (C,)
        dx = (dy - dy_mean - y * proj.reshape(bs)) * inv.reshape(bs)
        return dx, {"gamma": dgamma, "beta": dbeta}

    def copy(self):
        bn = QBatchNorm(self.channels, self.eps, self.momentum, self.gamma, self.beta, self.running_mean, self.running_var)
        bn.track_running_stats = self.track_running_stats
        return bn

    def __repr__(self):
        return f"QBatchNorm({self.channels})"


ACTIVATIONS = {
    "relu": (lambda s: np.maximum(s, 0.0), lambda s: (s > 0.0).astype(np.float64)),
}


class SplitActivation(Layer):
    """Applies a real activation to each of the four planes independently."""

    tag = 4

    def __init__(self, kind="relu"):
        if kind not in ACTIVATIONS:
            raise ContractError(f"unknown activation {kind!r}; known: {sorted(ACTIVATIONS)}")
        self.kind = kind

    def forward(self, x, training=False, rng=None):
        x = _as_planes(x)
        fn, _ = ACTIVATIONS[self.kind]
        return fn(x), x

    def backward(self, dout, cache):
        _, dfn = ACTIVATIONS[self.kind]
        return dout * dfn(cache), {}

    def copy(self):
        return SplitActivation(self.kind)

    def __repr__(self):
        return f"SplitActivation({self.kind!r})"


class QDropout(Layer):
    """Drops whole quaternions: all four components share one Bernoulli mask."""

    tag = 5

    def __init__(self, p=0.2):
        if not 0.0 <= p < 1.0:
            raise ContractError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = float(p)
        self.enabled = True

    @property
    def active(self):
        return self.enabled and self.p > 0.0

    def forward(self, x, training=False, rng=None):
        x = _as_planes(x)
        if not training or not self.active:
            return x, None
        if rng is None:
            raise ContractError("training-mode dropout needs a random generator")
        mask = (rng.random(x.shape[1:]) >= self.p) / (1.0 - self.p)
        return x * mask, mask

    def backward(self, dout, cache):
        return (dout if cache is None else dout * cache), {}

    def copy(self):
        d = QDropout(self.p)
        d.enabled = self.enabled
        return d

    def __repr__(self):
        return f"QDropout(p={self.p})"


class QMaxPool(Layer):
    """Selects, per window, the whole quaternion of largest norm (no component mixing)."""

    tag = 6

    def __init__(self, size=2):
        if size < 1:
            raise ContractError("pool size must be >= 1")
        self.size = int(size)

    def forward(self, x, training=False, rng=None):
        x = _as_planes(x)
        single = x.ndim == 4
        if single:
            x = x[:, None]
        out, arg = kernels.maxpool_forward(x, self.size)
        if single:
            out = out[:, 0]
        return out, (arg, x.shape, single)

    def backward(self, dout, cache):
        arg, x_shape, single = cache
        if single:
            dout = dout[:, None]
        dx = kernels.maxpool_backward(dout, arg, x_shape, self.size)
        return (dx[:, 0] if single else dx), {}

    def copy(self):
        return QMaxPool(self.size)

    def __repr__(self):
        return f"QMaxPool({self.size})"


class AbsHead(Layer):
    """Maps quaternion outputs to real scores ``|h_c|``."""

    tag = 7

    def forward(self, x, training=False, rng=None):
        x = _as_planes(x)
        norm = np.sqrt(np.einsum("c...,c...->...", x, x))
        return norm, (x, norm)

    def backward(self, dout, cache):
        x, norm = cache
        safe = np.where(norm > 0.0, norm, 1.0)
        return np.where(norm > 0.0, dout / safe, 0.0) * x, {}

    def copy(self):
        return AbsHead()


# functional surface ---------------------------------------------------------

def qdense_forward(layer: QDense, h):
    return layer.forward(h)[0]


def split_activation(h, kind="relu"):
    out = SplitActivation(kind).forward(h)[0]
    return QTensor(out) if isinstance(h, QTensor) else out


def qconv2d_forward(layer: QConv2d, x):
    return layer.forward(x)[0]


def quat_maxpool(x, size=2):
    out = QMaxPool(size).forward(x)[0]
    return QTensor(out) if isinstance(x, QTensor) else out


def qbn_forward(layer: QBatchNorm, h, training=False):
    return layer.forward(h, training=training)[0]


def abs_head(h):
    return AbsHead().forward(h)[0]


def qdropout_forward(layer: QDropout, h, training=False, rng=None):
    return layer.forward(h, training=training, rng=rng)[0]


def _log_softmax(scores):
    z = scores - scores.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(scores):
    z = np.asarray(scores, dtype=np.float64)
    return np.exp(_log_softmax(z))


def softmax_xent(scores, label, return_grad=False):
    """Cross-entropy of ``softmax(scores)``; batch inputs give the mean loss.

    ``scores`` is ``(C,)`` with an int label or ``(B, C)`` with ``B`` labels.
    With ``return_grad`` the gradient w.r.t. ``scores`` is also returned.
    """
    s = np.asarray(scores, dtype=np.float64)
    single = s.ndim == 1
    s2 = s[None] if single else s
    labels = np.atleast_1d(np.asarray(label))
    C = s2.shape[1]
    if labels.shape[0] != s2.shape[0]:
        raise DimensionError(f"{s2.shape[0]} score rows but {labels.shape[0]} labels")
    if np.any(labels < 0) or np.any(labels >= C):
        raise IndexError(f"label out of range for {C} classes: {labels[(labels < 0) | (labels >= C)][:5]}")
    logp = _log_softmax(s2)
    rows = np.arange(s2.shape[0])
    loss = float(-logp[rows, labels].mean())
    if not return_grad:
        return loss
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= s2.shape[0]
    return loss, (grad[0] if single else grad)
