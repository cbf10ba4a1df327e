import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sltgates.data import (MNIST_MEAN, MNIST_STD, BatchIterator, Dataset, IdxFormatError,
                           load_idx, load_mnist, make_synthetic, read_cifar_bin, split_validation,
                           standardize, take_subset, write_idx)

from conftest import MNIST_DIR, needs_mnist


def _fixture(tmp_path, images, labels, compress=False):
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    write_idx(ip, images, compress)
    write_idx(lp, labels, compress)
    return ip, lp


def test_two_image_fixture_round_trip(tmp_path):
    images = np.array([[[0, 255], [128, 1]], [[7, 8], [9, 10]]], dtype=np.uint8)
    ip, lp = _fixture(tmp_path, images, np.array([3, 9], dtype=np.uint8))
    # header is the documented big-endian layout
    raw = ip.read_bytes()
    assert raw[:16] == struct.pack(">IIII", 0x803, 2, 2, 2)
    ds = load_idx(ip, lp)
    assert ds.images.shape == (2, 1, 2, 2)
    np.testing.assert_array_equal(np.rint(ds.images[:, 0] * 255).astype(np.uint8), images)
    np.testing.assert_array_equal(ds.labels, [3, 9])


@settings(max_examples=20, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 5), st.integers(1, 5))),
       st.booleans())
def test_idx_round_trip_bit_exact(tmp_path_factory, images, compress):
    d = tmp_path_factory.mktemp("idx")
    labels = (np.arange(len(images)) % 10).astype(np.uint8)
    ip, lp = _fixture(d, images, labels, compress)
    ds = load_idx(ip, lp)
    assert (ds.images[:, 0] * np.float32(255)).round().astype(np.uint8).tobytes() == images.tobytes()
    np.testing.assert_array_equal(ds.labels, labels)


def test_gzip_autodetect(tmp_path):
    images = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
    plain = load_idx(*_fixture(tmp_path, images, np.array([1, 2], dtype=np.uint8)))
    ip, lp = tmp_path / "a", tmp_path / "b"
    ip.write_bytes(gzip.compress((tmp_path / "img.idx").read_bytes()))
    lp.write_bytes(gzip.compress((tmp_path / "lbl.idx").read_bytes()))
    packed = load_idx(ip, lp)
    assert packed.images.tobytes() == plain.images.tobytes()


def test_bad_magic(tmp_path):
    ip, lp = _fixture(tmp_path, np.zeros((1, 2, 2), np.uint8), np.zeros(1, np.uint8))
    with pytest.raises(IdxFormatError, match="magic"):
        load_idx(lp, ip)


def test_truncated(tmp_path):
    ip, lp = _fixture(tmp_path, np.zeros((3, 4, 4), np.uint8), np.zeros(3, np.uint8))
    ip.write_bytes(ip.read_bytes()[:-5])
    with pytest.raises(IdxFormatError, match="truncated"):
        load_idx(ip, lp)


def test_count_mismatch(tmp_path):
    ip, lp = _fixture(tmp_path, np.zeros((60_000, 1, 1), np.uint8), np.zeros(59_999, np.uint8))
    with pytest.raises(IdxFormatError, match="mismatch"):
        load_idx(ip, lp)


@needs_mnist
def test_canonical_mnist():
    train = load_mnist(MNIST_DIR, "train")
    test = load_mnist(MNIST_DIR, "test")
    assert train.images.shape == (60_000, 1, 28, 28)
    assert test.images.shape == (10_000, 1, 28, 28)
    assert set(np.unique(train.labels)) == set(range(10))
    assert 0.0 <= train.images.min() and train.images.max() <= 1.0
    assert np.bincount(train.labels).tolist() == [5923, 6742, 5958, 6131, 5842,
                                                  5421, 5918, 6265, 5851, 5949]


def test_mnist_missing_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_mnist(tmp_path, "train")


def test_cifar_records(tmp_path):
    rng = np.random.default_rng(0)
    rec = rng.integers(0, 256, size=(3, 3073), dtype=np.uint8)
    rec[:, 0] = [4, 0, 9]
    p = tmp_path / "data_batch_1.bin"
    p.write_bytes(rec.tobytes())
    ds = read_cifar_bin(p)
    assert ds.images.shape == (3, 3, 32, 32)
    np.testing.assert_array_equal(ds.labels, [4, 0, 9])
    np.testing.assert_array_equal(np.rint(ds.images[1] * 255).reshape(-1), rec[1, 1:])
    p.write_bytes(rec.tobytes()[:-1])
    with pytest.raises(ValueError):
        read_cifar_bin(p)


# ---------------------------------------------------------------- splits

def _toy(n):
    return Dataset(np.arange(n, dtype=np.float32).reshape(n, 1, 1, 1), np.arange(n) % 10)


def test_split_sizes_disjoint_exhaustive():
    tr, va = split_validation(_toy(60_000), 5000, seed=0)
    assert (len(tr), len(va)) == (55_000, 5000)
    a = tr.images.reshape(-1).astype(int)
    b = va.images.reshape(-1).astype(int)
    assert not set(a) & set(b)
    assert sorted(np.concatenate([a, b]).tolist()) == list(range(60_000))
    assert va.split == "val"


def test_split_deterministic():
    a = split_validation(_toy(1000), 100, seed=4)[1]
    b = split_validation(_toy(1000), 100, seed=4)[1]
    np.testing.assert_array_equal(a.images, b.images)


def test_split_too_large():
    with pytest.raises(ValueError):
        split_validation(_toy(10), 10)


def test_take_subset():
    ds = take_subset(_toy(100), 30, seed=1)
    assert len(ds) == 30
    assert len(take_subset(_toy(10), 30)) == 10


def test_label_range_checked():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1, 1, 1), np.float32), [0, 10])


# ---------------------------------------------------------------- standardization

def test_standardize_computed_stats(rng):
    ds = Dataset(rng.uniform(0, 1, size=(500, 1, 8, 8)).astype(np.float32), np.zeros(500))
    out, mean, std = standardize(ds)
    x = out.images.astype(np.float64)
    assert abs(x.mean()) <= 1e-6
    assert abs(x.std() - 1) <= 1e-4


def test_standardize_fixed_constants():
    ds = Dataset(np.full((2, 1, 2, 2), 0.1307, np.float32), [0, 1])
    out, mean, std = standardize(ds, MNIST_MEAN, MNIST_STD)
    np.testing.assert_allclose(out.images, 0.0, atol=1e-6)
    assert float(std[0]) == MNIST_STD


# ---------------------------------------------------------------- synthetic

def test_xor_canonical():
    ds = make_synthetic("xor", 4)
    np.testing.assert_array_equal(ds.images.reshape(4, 2), [[0, 0], [0, 1], [1, 0], [1, 1]])
    np.testing.assert_array_equal(ds.labels, [0, 1, 1, 0])


def test_synthetic_deterministic():
    a, b = make_synthetic("two-gaussians", 200, 3), make_synthetic("two-gaussians", 200, 3)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.images.shape == (200, 1, 1, 2) and a.num_classes == 2
    assert np.bincount(a.labels).tolist() == [100, 100]


def test_synthetic_errors():
    with pytest.raises(ValueError):
        make_synthetic("spiral", 10)
    with pytest.raises(ValueError):
        make_synthetic("xor", 0)


# ---------------------------------------------------------------- batching

@settings(max_examples=25, deadline=None)
@given(st.integers(1, 300), st.integers(1, 64), st.integers(0, 1000))
def test_epoch_visits_every_example_once(n, bs, seed):
    it = BatchIterator(_toy(n), bs, seed)
    for _ in range(2):
        seen = np.concatenate([x.reshape(-1) for x, _ in it]).astype(int)
        assert sorted(seen.tolist()) == list(range(n))
    assert it.epoch == 2


def test_order_depends_on_seed_and_epoch():
    it = BatchIterator(_toy(50), 8, seed=2)
    assert it.order(0).tobytes() == BatchIterator(_toy(50), 8, seed=2).order(0).tobytes()
    assert not np.array_equal(it.order(0), it.order(1))
    assert not np.array_equal(it.order(0), BatchIterator(_toy(50), 8, seed=3).order(0))
    assert len(it) == 7
