"""MNIST / CIFAR-10 readers and pixel-to-quaternion encodings."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, TruncatedFileError, WrongMagicError
from .quaternion import Quaternion

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073
PIXEL_SCALE = 255.0


def encode_gray(g) -> Quaternion:
    """Grey level ``g`` in [0, 1] -> ``g + 0i + 0j + 0k``."""
    return Quaternion(float(g), 0.0, 0.0, 0.0)


def encode_rgb(r, g, b) -> Quaternion:
    """RGB in [0, 1] -> pure quaternion ``0 + ri + gj + bk``."""
    return Quaternion(0.0, float(r), float(g), float(b))


def decode_gray(q) -> float:
    return float(q[0])


def decode_rgb(q):
    return float(q[1]), float(q[2]), float(q[3])


@dataclass
class Dataset:
    """Images stored compactly as bytes and encoded to quaternion planes on access.

    ``pixels`` is ``(N, C, H, W)`` uint8 with ``C == 1`` for ``"gray"`` and
    ``C == 3`` for ``"rgb"``.  Synthetic datasets may pass ready planes
    ``(4, N, C, H, W)`` via :meth:`from_planes` instead.
    """

    pixels: np.ndarray | None
    labels: np.ndarray
    num_classes: int = 10
    encoding: str = "gray"
    planes: np.ndarray | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.labels.shape[0]
        src = self.pixels if self.pixels is not None else self.planes[0]
        if src.shape[0] != n:
            raise DataError(f"{src.shape[0]} images but {n} labels")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    @classmethod
    def from_planes(cls, planes, labels, num_classes=10):
        planes = np.asarray(planes, dtype=np.float64)
        return cls(None, labels, num_classes, encoding="planes", planes=planes)

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def image_shape(self):
        """Per-sample quaternion shape ``(channels, H, W)``."""
        if self.planes is not None:
            return tuple(self.planes.shape[2:])
        return (1, *self.pixels.shape[2:])

    def batch(self, idx):
        """Quaternion planes ``(4, len(idx), C, H, W)`` for the given sample indices."""
        if self.planes is not None:
            return self.planes[:, idx]
        px = self.pixels[idx].astype(np.float64) / PIXEL_SCALE
        out = np.zeros((4, px.shape[0], 1, *px.shape[2:]))
        if self.encoding == "gray":
            out[0] = px
        else:
            out[1:] = px.transpose(1, 0, 2, 3)[:, :, None]
        return out

    @property
    def images(self):
        return self.batch(np.arange(len(self)))

    def subset(self, idx):
        idx = np.asarray(idx)
        if self.planes is not None:
            return Dataset.from_planes(self.planes[:, idx], self.labels[idx], self.num_classes)
        return Dataset(self.pixels[idx], self.labels[idx], self.num_classes, self.encoding)

    def split(self, n_tail):
        """``(head, tail)`` where ``tail`` holds the last ``n_tail`` samples."""
        n = len(self)
        cut = max(0, n - n_tail)
        return self.subset(np.arange(cut)), self.subset(np.arange(cut, n))


# IDX --------------------------------------------------------------------------

def _read_bytes(path):
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw: bytes, expected_magic: int, name="idx") -> np.ndarray:
    if len(raw) < 4:
        raise TruncatedFileError(f"{name}: truncated header, expected at least 4 bytes, got {len(raw)}")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise WrongMagicError(f"{name}: wrong magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise TruncatedFileError(f"{name}: truncated header, expected {head} bytes, got {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    expected = head + int(np.prod(dims, dtype=np.int64))
    if len(raw) != expected:
        kind = TruncatedFileError if len(raw) < expected else FormatError
        raise kind(f"{name}: expected {expected} bytes for dims {dims}, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(dims)


_MNIST_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(directory: Path, stem: str) -> Path:
    # accept both "train-images-idx3-ubyte" and "train-images.idx3-ubyte", optionally gzipped
    alt = stem.replace("-idx", ".idx")
    for cand in (stem, alt, stem + ".gz", alt + ".gz"):
        p = directory / cand
        if p.exists():
            return p
    raise DataError(f"missing MNIST file {stem} in {directory}")


def load_idx_pair(images_path, labels_path, num_classes=10) -> Dataset:
    images = parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, os.path.basename(images_path))
    labels = parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, os.path.basename(labels_path))
    if images.ndim != 3:
        raise FormatError(f"image file must be 3-D (N, H, W), got {images.ndim}-D")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"image/label count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    return Dataset(images[:, None].copy(), labels.astype(np.int64), num_classes, "gray")


def load_mnist(directory, split="train") -> Dataset:
    """Read an MNIST split from IDX files; pixels become real quaternions ``g/255``."""
    d = Path(directory)
    img, lab = _MNIST_NAMES[split]
    return load_idx_pair(_find(d, img), _find(d, lab))


# CIFAR-10 ----------------------------------------------------------------------

def parse_cifar_batch(raw: bytes, name="cifar") -> tuple:
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise FormatError(f"{name}: size {len(raw)} is not a positive multiple of the {CIFAR_RECORD}-byte record")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise FormatError(f"{name}: label byte {labels.max()} outside 0..9")
    return rec[:, 1:].reshape(-1, 3, 32, 32).copy(), labels


def load_cifar10(directory, split="train") -> Dataset:
    """Read CIFAR-10 binary batches; pixels become pure quaternions ``(0, r, g, b)/255``."""
    d = Path(directory)
    if (d / "cifar-10-batches-bin").is_dir():
        d = d / "cifar-10-batches-bin"
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    pix, labs = [], []
    for n in names:
        p = d / n
        if not p.exists():
            raise DataError(f"missing CIFAR-10 file {n} in {d}")
        a, b = parse_cifar_batch(p.read_bytes(), n)
        pix.append(a)
        labs.append(b)
    return Dataset(np.concatenate(pix), np.concatenate(labs), 10, "rgb")


def load_dataset(name, directory, split="train") -> Dataset:
    if name == "mnist":
        return load_mnist(directory, split)
    if name == "cifar10":
        return load_cifar10(directory, split)
    raise DataError(f"unknown dataset {name!r}; expected mnist or cifar10")
