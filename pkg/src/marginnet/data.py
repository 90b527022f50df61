"""Datasets: MNIST IDX ingestion, preprocessing, synthetic blobs and splits."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class DataFormatError(ValueError):
    """A data file is malformed; ``offset`` is the byte position of the problem."""

    def __init__(self, path, offset, message):
        super().__init__(f"{path}: byte offset {offset}: {message}")
        self.path = path
        self.offset = offset


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray  # 1-based class ids
    K: int
    M: float

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError(f"features {x.shape} and labels {y.shape} do not line up")
        if x.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if y.min() < 1 or y.max() > self.K:
            raise ValueError(f"labels must lie in 1..{self.K}")
        if np.abs(x).max() > self.M + 1e-9:
            raise ValueError(f"features exceed the declared bound M={self.M}")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        return Dataset(self.features[index], self.labels[index], self.K, self.M)

    def head(self, n: int) -> "Dataset":
        return self.subset(slice(0, n))

    def __eq__(self, other):
        return (isinstance(other, Dataset) and self.K == other.K and self.M == other.M
                and np.array_equal(self.features, other.features) and np.array_equal(self.labels, other.labels))


def _read_header(path, data, magic, n_dims):
    need = 4 * (1 + n_dims)
    if len(data) < need:
        raise DataFormatError(path, len(data), f"file too short for a {need}-byte header")
    found = struct.unpack_from(">I", data, 0)[0]
    if found != magic:
        raise DataFormatError(path, 0, f"magic number 0x{found:08x}, expected 0x{magic:08x}")
    return struct.unpack_from(f">{n_dims}I", data, 4)


def read_idx_images(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    count, rows, cols = _read_header(path, data, IMAGES_MAGIC, 3)
    expected = 16 + count * rows * cols
    if len(data) < expected:
        raise DataFormatError(path, len(data), f"truncated: header promises {count} images of {rows}x{cols} "
                                               f"({expected} bytes), file has {len(data)}")
    if len(data) > expected:
        raise DataFormatError(path, expected, f"{len(data) - expected} trailing bytes after the last image")
    return np.frombuffer(data, dtype=np.uint8, offset=16).reshape(count, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    (count,) = _read_header(path, data, LABELS_MAGIC, 1)
    expected = 8 + count
    if len(data) < expected:
        raise DataFormatError(path, len(data), f"truncated: header promises {count} labels, file has "
                                               f"{len(data) - 8}")
    if len(data) > expected:
        raise DataFormatError(path, expected, f"{len(data) - expected} trailing bytes after the last label")
    return np.frombuffer(data, dtype=np.uint8, offset=8)


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Load an (uncompressed) MNIST image/label pair, pixels scaled to [0, 1], labels shifted to 1..10."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(labels_path, 4, f"label count {labels.shape[0]} != image count {images.shape[0]}")
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise DataFormatError(labels_path, 8 + bad, f"label {labels[bad]} outside 0..9")
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64) + 1, 10, 1.0)


def load_mnist(directory, part="train") -> Dataset:
    images, labels = MNIST_FILES[part]
    return load_mnist_idx(os.path.join(directory, images), os.path.join(directory, labels))


def per_feature_mean_center(train: Dataset, others=()) -> list:
    """Subtract the training-set per-feature mean from ``train`` and every dataset in ``others``."""
    for ds in others:
        if ds.d != train.d:
            raise ValueError(f"dimension mismatch: {ds.d} vs {train.d}")
    mean = train.features.mean(axis=0)
    out = []
    for ds in (train, *others):
        x = ds.features - mean
        bound = float(np.abs(x).max()) if x.size else 0.0
        out.append(Dataset(x, ds.labels, ds.K, bound))
    return out


def synthetic_blobs(m: int, d: int, K: int, spread: float, seed: int, bound: float = 3.0) -> Dataset:
    """``K`` Gaussian clusters with centers at least one unit apart, clipped to ``[-bound, bound]^d``.

    Labels are balanced (class sizes differ by at most one) and samples are
    shuffled.
    """
    if m < K or d < 1 or K < 2:
        raise ValueError("need m >= K >= 2 and d >= 1")
    rng = np.random.default_rng(seed)
    centers = []
    box = bound - 1.0
    attempts = 0
    while len(centers) < K:
        c = rng.uniform(-box, box, size=d)
        attempts += 1
        if all(np.linalg.norm(c - o) >= 1.0 for o in centers):
            centers.append(c)
        elif attempts > 10000:
            raise ValueError(f"cannot place {K} unit-separated centers in {d} dimensions")
    centers = np.array(centers)
    labels = rng.permutation(np.arange(m) % K) + 1
    x = centers[labels - 1] + spread * rng.standard_normal((m, d))
    return Dataset(np.clip(x, -bound, bound), labels, K, bound)


def split(dataset: Dataset, fractions, seed: int) -> list:
    """Seeded permutation followed by contiguous cuts of the given fractions."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.size == 0 or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be positive and sum to 1, got {list(fractions)}")
    perm = np.random.default_rng(seed).permutation(dataset.m)
    cuts = np.rint(np.cumsum(fr) * dataset.m).astype(int)
    cuts[-1] = dataset.m
    parts, start = [], 0
    for stop in cuts:
        parts.append(dataset.subset(perm[start:stop]))
        start = stop
    return parts
