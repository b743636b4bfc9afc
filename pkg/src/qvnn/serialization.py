"""Binary model files.

Layout (little-endian)::

    b"QVNN" | u32 version | u32 input ndim | u32 input extents... | u32 classes
    | u32 name length | name utf-8 | u32 layer count | layer records...

Each record is a type-tag byte, then ``u32 ndim`` and ``u32`` shape extents,
then layer fields; parameter planes are float32 in r, i, j, k order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, TruncatedFileError, UnknownLayerTagError, UnsupportedVersionError, WrongMagicError
from .layers import AbsHead, QBatchNorm, QConv2d, QDense, QDropout, QMaxPool, SplitActivation
from .model import Model

MAGIC = b"QVNN"
VERSION = 1

_ACTIVATION_CODES = {"relu": 0}


class _Writer:
    def __init__(self):
        self.parts = []

    def u32(self, *vals):
        self.parts.append(struct.pack(f"<{len(vals)}I", *vals))

    def u8(self, v):
        self.parts.append(struct.pack("<B", v))

    def f32(self, arr):
        self.parts.append(np.asarray(arr, dtype="<f4").tobytes())

    def shape(self, dims):
        self.u32(len(dims), *dims)

    def bytes(self):
        return b"".join(self.parts)


class _Reader:
    def __init__(self, raw: bytes, name):
        self.raw = raw
        self.pos = 0
        self.name = name

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise TruncatedFileError(
                f"{self.name}: truncated, needed {self.pos + n} bytes but file has {len(self.raw)}"
            )
        b = self.raw[self.pos:self.pos + n]
        self.pos += n
        return b

    def u32(self, n=1):
        vals = struct.unpack(f"<{n}I", self.take(4 * n))
        return vals[0] if n == 1 else vals

    def u8(self):
        return self.take(1)[0]

    def f32(self, shape):
        count = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float64).reshape(shape)

    def shape(self):
        nd = self.u32()
        return tuple(self.u32(nd)) if nd > 1 else ((self.u32(),) if nd == 1 else ())


def _write_layer(w: _Writer, layer):
    w.u8(layer.tag)
    if isinstance(layer, QDense):
        w.shape((layer.out_features, layer.in_features))
        w.u32(int(layer.use_bias))
        w.f32(layer.W)
        w.f32(layer.b)
    elif isinstance(layer, QConv2d):
        w.shape(layer.W.shape[1:])
        w.u32(layer.stride, layer.padding, int(layer.use_bias))
        w.f32(layer.W)
        w.f32(layer.b)
    elif isinstance(layer, QBatchNorm):
        w.shape((layer.channels,))
        w.f32(layer.gamma)
        w.f32(layer.beta)
        w.f32(layer.running_mean)
        w.f32(layer.running_var)
        w.f32([layer.eps, layer.momentum])
    elif isinstance(layer, SplitActivation):
        w.shape(())
        w.u32(_ACTIVATION_CODES[layer.kind])
    elif isinstance(layer, QDropout):
        w.shape(())
        w.f32([layer.p])
    elif isinstance(layer, QMaxPool):
        w.shape(())
        w.u32(layer.size)
    elif isinstance(layer, AbsHead):
        w.shape(())
    else:
        raise TypeError(f"cannot serialize layer {layer!r}")


def _read_layer(r: _Reader):
    tag = r.u8()
    dims = r.shape()
    if tag == QDense.tag:
        out_f, in_f = dims
        bias = bool(r.u32())
        W = r.f32((4, out_f, in_f))
        b = r.f32((4, out_f))
        return QDense(in_f, out_f, W=W, b=b, bias=bias)
    if tag == QConv2d.tag:
        o, c, kh, kw = dims
        stride, pad, bias = r.u32(3)
        W = r.f32((4, o, c, kh, kw))
        b = r.f32((4, o))
        return QConv2d(c, o, (kh, kw), stride, pad, W=W, b=b, bias=bool(bias))
    if tag == QBatchNorm.tag:
        (ch,) = dims
        gamma = r.f32((ch,))
        beta = r.f32((4, ch))
        mu = r.f32((4, ch))
        var = r.f32((ch,))
        eps, mom = r.f32((2,))
        return QBatchNorm(ch, float(eps), float(mom), gamma, beta, mu, var)
    if tag == SplitActivation.tag:
        code = r.u32()
        kinds = {v: k for k, v in _ACTIVATION_CODES.items()}
        if code not in kinds:
            raise UnknownLayerTagError(f"{r.name}: unknown activation code {code}")
        return SplitActivation(kinds[code])
    if tag == QDropout.tag:
        return QDropout(float(np.float32(r.f32((1,))[0])))
    if tag == QMaxPool.tag:
        return QMaxPool(r.u32())
    if tag == AbsHead.tag:
        return AbsHead()
    raise UnknownLayerTagError(f"{r.name}: unknown layer type tag {tag}")


def dumps(model) -> bytes:
    w = _Writer()
    w.parts.append(MAGIC)
    w.u32(VERSION)
    w.shape(model.input_shape)
    w.u32(model.num_classes)
    name = model.name.encode()
    w.u32(len(name))
    w.parts.append(name)
    w.u32(len(model.layers))
    for layer in model.layers:
        _write_layer(w, layer)
    return w.bytes()


def loads(raw: bytes, name="<bytes>") -> Model:
    r = _Reader(raw, name)
    magic = r.take(4)
    if magic != MAGIC:
        raise WrongMagicError(f"{name}: bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32()
    if version != VERSION:
        raise UnsupportedVersionError(f"{name}: unsupported format version {version} (this build reads {VERSION})")
    input_shape = r.shape()
    classes = r.u32()
    model_name = r.take(r.u32()).decode("utf-8", errors="replace")
    count = r.u32()
    layers = [_read_layer(r) for _ in range(count)]
    if r.pos != len(raw):
        raise FormatError(f"{name}: {len(raw) - r.pos} trailing bytes after the last layer")
    return Model(layers, input_shape, classes, model_name)


def save_model(model, path):
    Path(path).write_bytes(dumps(model))


def load_model(path) -> Model:
    return loads(Path(path).read_bytes(), str(path))
