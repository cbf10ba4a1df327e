"""Dataset ingestion: MNIST IDX, CIFAR-10 binary, and toy datasets."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_MEAN = 0.1307
MNIST_STD = 0.3081
CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2435, 0.2616)

_MNIST_FILES = {
    "train": (("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
              ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte")),
    "test": (("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
             ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte")),
}


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # N x C x H x W
    labels: np.ndarray  # N, int64
    split: str = "train"
    num_classes: int = 10

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be N x C x H x W, got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def subset(self, idx, split: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, images=self.images[idx], labels=self.labels[idx],
                       split=split or self.split)


# ---------------------------------------------------------------------------
# IDX


def _read_maybe_gzip(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, expect_magic: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expect_magic:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expect_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise IdxFormatError(f"{path}: truncated file, expected {count} bytes of data, "
                             f"found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Read an IDX image/label pair (gzip auto-detected); pixels scaled to [0, 1]."""
    images = _parse_idx(_read_maybe_gzip(images_path), IDX_IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read_maybe_gzip(labels_path), IDX_LABELS_MAGIC, labels_path)
    if len(images) != len(labels):
        raise IdxFormatError(f"count mismatch: {len(images)} images in {images_path}, "
                             f"{len(labels)} labels in {labels_path}")
    x = (images.astype(np.float32) / 255.0)[:, None, :, :]
    return Dataset(x, labels.astype(np.int64), split=split,
                   num_classes=max(10, int(labels.max()) + 1) if len(labels) else 10)


def write_idx(path, array: np.ndarray, compress: bool = False) -> None:
    """Write a uint8 array as IDX (3-D images or 1-D labels)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    payload = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    payload += np.ascontiguousarray(array).tobytes()
    if compress:
        payload = gzip.compress(payload, mtime=0)
    Path(path).write_bytes(payload)


def _find(data_dir: Path, names) -> Path:
    for name in names:
        for cand in (data_dir / name, data_dir / (name + ".gz")):
            if cand.exists():
                return cand
    raise FileNotFoundError(f"none of {list(names)} (or .gz) found in {data_dir}")


def load_mnist(data_dir, split: str = "train") -> Dataset:
    data_dir = Path(data_dir)
    img_names, lbl_names = _MNIST_FILES[split]
    return load_idx(_find(data_dir, img_names), _find(data_dir, lbl_names), split=split)


# ---------------------------------------------------------------------------
# CIFAR-10 binary

_CIFAR_RECORD = 1 + 3 * 32 * 32


def read_cifar_bin(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) % _CIFAR_RECORD:
        raise ValueError(f"{path}: size {len(raw)} is not a multiple of {_CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, _CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    images = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return Dataset(images, labels, num_classes=10)


def load_cifar10(data_dir, split: str = "train") -> Dataset:
    data_dir = Path(data_dir)
    names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    parts = []
    for name in names:
        p = data_dir / name
        if not p.exists():
            p = data_dir / "cifar-10-batches-bin" / name
        if not p.exists():
            raise FileNotFoundError(f"{name} not found in {data_dir}")
        parts.append(read_cifar_bin(p))
    return Dataset(np.concatenate([d.images for d in parts]),
                   np.concatenate([d.labels for d in parts]), split=split)


# ---------------------------------------------------------------------------
# preprocessing and splits


def standardize(ds: Dataset, mean=None, std=None) -> tuple:
    """Standardize per channel. Missing statistics are computed from ``ds``.

    Returns ``(dataset, mean, std)`` so the same constants can be reused on
    validation and test data.
    """
    x = ds.images.astype(np.float64)
    c = x.shape[1]
    if mean is None:
        mean = x.mean(axis=(0, 2, 3))
    if std is None:
        std = x.std(axis=(0, 2, 3))
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (c,)).copy()
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), (c,)).copy()
    if np.any(std <= 0):
        raise ValueError("standard deviation must be positive")
    x = (x - mean[None, :, None, None]) / std[None, :, None, None]
    return replace(ds, images=x.astype(ds.images.dtype)), mean, std


def split_validation(train: Dataset, val_count: int = 5000, seed: int = 0) -> tuple:
    """Disjoint, exhaustive, seed-deterministic (train', val) split."""
    n = len(train)
    if not 0 <= val_count < n:
        raise ValueError(f"val_count must be in [0, {n}), got {val_count}")
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = np.sort(perm[:val_count])
    tr_idx = np.sort(perm[val_count:])
    return train.subset(tr_idx, "train"), train.subset(val_idx, "val")


def take_subset(ds: Dataset, count: int, seed: int = 0) -> Dataset:
    if count >= len(ds):
        return ds
    idx = np.sort(np.random.default_rng(seed).permutation(len(ds))[:count])
    return ds.subset(idx)


def make_synthetic(kind: str = "two-gaussians", n: int = 200, seed: int = 0) -> Dataset:
    """Two-class toy data shaped N x 1 x 1 x 2."""
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    if kind == "two-gaussians":
        y = np.arange(n) % 2
        centers = np.where(y[:, None] == 0, -2.0, 2.0) * np.ones((n, 2))
        x = centers + rng.standard_normal((n, 2))
    elif kind == "xor":
        base = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        base_y = np.array([0, 1, 1, 0])
        idx = np.arange(n) % 4
        x = base[idx]
        y = base_y[idx]
        if n > 4:
            x = x + np.where(np.arange(n)[:, None] < 4, 0.0, 0.1 * rng.standard_normal((n, 2)))
    else:
        raise ValueError(f"unknown synthetic dataset {kind!r}")
    return Dataset(x.reshape(n, 1, 1, 2).astype(np.float32), y, split="train", num_classes=2)


class BatchIterator:
    """Shuffled minibatches; the order for epoch ``e`` depends only on (seed, e)."""

    def __init__(self, dataset: Dataset, batch_size: int = 128, seed: int = 0,
                 shuffle: bool = True):
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.shuffle = shuffle
        self.epoch = 0

    def order(self, epoch: int) -> np.ndarray:
        n = len(self.dataset)
        if not self.shuffle:
            return np.arange(n)
        return np.random.default_rng([self.seed, epoch]).permutation(n)

    def __len__(self):
        return -(-len(self.dataset) // self.batch_size)

    def __iter__(self):
        order = self.order(self.epoch)
        self.epoch += 1
        bs = self.batch_size
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            yield self.dataset.images[idx], self.dataset.labels[idx]
