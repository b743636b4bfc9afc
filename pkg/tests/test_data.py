import gzip
import struct

import numpy as np
import pytest

from qvnn import Dataset, encode_gray, encode_rgb, load_cifar10, load_mnist
from qvnn.data import (
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    decode_gray,
    decode_rgb,
    load_dataset,
    parse_cifar_batch,
    parse_idx,
)
from qvnn.errors import DataError, FormatError, QVNNError, TruncatedFileError, WrongMagicError


def idx_bytes(arr, magic):
    arr = np.asarray(arr, dtype=np.uint8)
    return struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes()


@pytest.fixture
def mnist_dir(tmp_path):
    rng = np.random.default_rng(0)
    for prefix, n in (("train", 12), ("t10k", 5)):
        imgs = rng.integers(0, 256, size=(n, 28, 28))
        labs = rng.integers(0, 10, size=n)
        (tmp_path / f"{prefix}-images-idx3-ubyte").write_bytes(idx_bytes(imgs, IDX_IMAGES_MAGIC))
        (tmp_path / f"{prefix}-labels-idx1-ubyte").write_bytes(idx_bytes(labs, IDX_LABELS_MAGIC))
    return tmp_path


class TestEncodings:
    def test_gray(self):
        assert encode_gray(0.5) == (0.5, 0, 0, 0)
        assert encode_gray(0) == (0, 0, 0, 0)
        assert encode_gray(1) == (1, 0, 0, 0)

    def test_rgb(self):
        assert encode_rgb(0.2, 0.4, 0.6) == (0, 0.2, 0.4, 0.6)
        assert encode_rgb(0, 0, 0) == (0, 0, 0, 0)

    def test_round_trip(self):
        for g in np.linspace(0, 1, 11):
            assert decode_gray(encode_gray(g)) == g
        rgb = (0.1, 0.7, 1.0)
        assert decode_rgb(encode_rgb(*rgb)) == rgb


class TestMnist:
    def test_load(self, mnist_dir):
        ds = load_mnist(mnist_dir, "train")
        assert len(ds) == 12 and ds.image_shape == (1, 28, 28)
        x = ds.batch(np.arange(3))
        assert x.shape == (4, 3, 1, 28, 28)
        assert x[1:].max() == 0 and 0 <= x.min() and x.max() <= 1
        assert x[0, 1, 0, 5, 7] == ds.pixels[1, 0, 5, 7] / 255

    def test_dot_names_and_gzip(self, mnist_dir):
        for f in list(mnist_dir.iterdir()):
            name = f.name.replace("-idx", ".idx")
            (mnist_dir / (name + ".gz")).write_bytes(gzip.compress(f.read_bytes()))
            f.unlink()
        assert len(load_mnist(mnist_dir, "test")) == 5

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="missing"):
            load_mnist(tmp_path)

    def test_wrong_magic(self, mnist_dir):
        p = mnist_dir / "train-labels-idx1-ubyte"
        raw = p.read_bytes()
        p.write_bytes(struct.pack(">I", IDX_IMAGES_MAGIC) + raw[4:])
        with pytest.raises(WrongMagicError, match="wrong magic"):
            load_mnist(mnist_dir)

    def test_truncated_names_byte_counts(self, mnist_dir):
        p = mnist_dir / "train-images-idx3-ubyte"
        raw = p.read_bytes()
        p.write_bytes(raw[:-10])
        with pytest.raises(TruncatedFileError, match=f"expected {len(raw)} bytes.*got {len(raw) - 10}"):
            load_mnist(mnist_dir)

    def test_count_mismatch(self, mnist_dir):
        (mnist_dir / "train-labels-idx1-ubyte").write_bytes(idx_bytes(np.zeros(11), IDX_LABELS_MAGIC))
        with pytest.raises(FormatError, match="mismatch"):
            load_mnist(mnist_dir)

    def test_fuzz_corruptions(self, mnist_dir):
        good = (mnist_dir / "t10k-images-idx3-ubyte").read_bytes()
        rng = np.random.default_rng(1)
        errors = 0
        for trial in range(100):
            raw = bytearray(good)
            if trial % 2:
                pos = int(rng.integers(0, 4))
                raw[pos] = (raw[pos] + int(rng.integers(1, 256))) % 256
            else:
                raw = raw[: int(rng.integers(0, len(good)))]
            try:
                parse_idx(bytes(raw), IDX_IMAGES_MAGIC, "fuzz")
            except QVNNError:
                errors += 1
        assert errors == 100


class TestCifar:
    def records(self, n, seed=0):
        rng = np.random.default_rng(seed)
        rec = rng.integers(0, 256, size=(n, 3073)).astype(np.uint8)
        rec[:, 0] = rng.integers(0, 10, n)
        return rec

    def test_parse_and_encode(self, tmp_path):
        rec = self.records(4)
        for i in range(1, 6):
            (tmp_path / f"data_batch_{i}.bin").write_bytes(rec.tobytes())
        (tmp_path / "test_batch.bin").write_bytes(rec[:2].tobytes())
        ds = load_cifar10(tmp_path, "train")
        assert len(ds) == 20
        x = ds.batch(np.arange(len(ds)))
        assert x.shape == (4, 20, 1, 32, 32)
        assert not x[0].any()
        assert x[1, 0, 0, 0, 0] == rec[0, 1] / 255
        assert x[3, 0, 0, 31, 31] == rec[0, 3072] / 255
        assert len(load_dataset("cifar10", tmp_path, "test")) == 2

    def test_record_size(self):
        with pytest.raises(FormatError, match="3073"):
            parse_cifar_batch(b"\x00" * 3072)

    def test_fuzz_truncations(self):
        good = self.records(3, seed=2).tobytes()
        rng = np.random.default_rng(3)
        for _ in range(100):
            cut = int(rng.integers(0, len(good)))
            if cut % 3073 == 0:
                cut += 1
            with pytest.raises(FormatError):
                parse_cifar_batch(good[:cut])

    def test_bad_label(self):
        rec = self.records(1)
        rec[0, 0] = 11
        with pytest.raises(FormatError, match="label"):
            parse_cifar_batch(rec.tobytes())


class TestDataset:
    def test_split_and_subset(self):
        ds = Dataset(np.zeros((10, 1, 2, 2), np.uint8), np.arange(10) % 3, 3)
        head, tail = ds.split(4)
        assert len(head) == 6 and list(tail.labels) == [0, 1, 2, 0]
        assert list(ds.subset([9, 0]).labels) == [0, 0]

    def test_label_validation(self):
        with pytest.raises(DataError):
            Dataset(np.zeros((2, 1, 2, 2), np.uint8), [0, 5], 3)
        with pytest.raises(DataError):
            Dataset(np.zeros((2, 1, 2, 2), np.uint8), [0], 3)

    def test_from_planes(self):
        planes = np.random.default_rng(0).normal(size=(4, 3, 1, 2, 2))
        ds = Dataset.from_planes(planes, [0, 1, 0], 2)
        np.testing.assert_array_equal(ds.batch([2]), planes[:, [2]])
        assert ds.image_shape == (1, 2, 2)

    def test_unknown_dataset(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset("svhn", tmp_path)
