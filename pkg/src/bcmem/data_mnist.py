"""IDX-format MNIST ingestion, normalization, stratified split, batching."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


class IdxError(ValueError):
    """Base class for IDX parse failures."""


class IdxMagicError(IdxError):
    """File does not start with the expected magic number."""


class IdxDimensionError(IdxError):
    """Row/column counts differ from the expected 28x28."""


class IdxSizeError(IdxError):
    """Payload length does not match the header's item count."""


@dataclass
class Dataset:
    images: np.ndarray  # (N, 784) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64 in [0, 9]

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"image/label count mismatch: {self.images.shape[0]} != {self.labels.shape[0]}"
            )

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx])


def _read_header(data: bytes, n_words: int, what: str) -> tuple[int, ...]:
    size = 4 * n_words
    if len(data) < size:
        raise IdxSizeError(f"{what}: file shorter than its {size}-byte header")
    return struct.unpack(f">{n_words}I", data[:size])


def parse_idx_images(data: bytes) -> np.ndarray:
    """Parse an IDX image file into an (N, 784) uint8 array."""
    magic, count, rows, cols = _read_header(data, 4, "images")
    if magic != IMAGE_MAGIC:
        raise IdxMagicError(f"images: bad magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")
    if (rows, cols) != (28, 28):
        raise IdxDimensionError(f"images: expected 28x28, got {rows}x{cols}")
    payload = data[16:]
    expected = count * rows * cols
    if len(payload) != expected:
        raise IdxSizeError(f"images: payload is {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols)


def parse_idx_labels(data: bytes) -> np.ndarray:
    """Parse an IDX label file into an (N,) uint8 array."""
    magic, count = _read_header(data, 2, "labels")
    if magic != LABEL_MAGIC:
        raise IdxMagicError(f"labels: bad magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")
    payload = data[8:]
    if len(payload) != count:
        raise IdxSizeError(f"labels: payload is {len(payload)} bytes, header implies {count}")
    labels = np.frombuffer(payload, dtype=np.uint8)
    if labels.size and labels.max() > 9:
        raise IdxError(f"labels: value {labels.max()} out of range 0..9")
    return labels


def normalize(pixels: np.ndarray) -> np.ndarray:
    """uint8 pixels -> float64 in [0, 1]."""
    return pixels.astype(np.float64) / 255.0


def _read_file(path: Path) -> bytes:
    data = path.read_bytes()
    if data[:2] == b"\x1f\x8b":
        return gzip.decompress(data)
    return data


def _find(data_dir: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        p = data_dir / name
        if p.exists():
            return p
    raise FileNotFoundError(f"{stem}[.gz] not found in {data_dir}")


def load_split(data_dir: str | Path, split: str) -> Dataset:
    """Load the 'train' or 'test' split from IDX files (optionally gzipped)."""
    data_dir = Path(data_dir)
    if split == "train":
        img_stem, lab_stem = TRAIN_IMAGES, TRAIN_LABELS
    elif split == "test":
        img_stem, lab_stem = TEST_IMAGES, TEST_LABELS
    else:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    images = parse_idx_images(_read_file(_find(data_dir, img_stem)))
    labels = parse_idx_labels(_read_file(_find(data_dir, lab_stem)))
    return Dataset(normalize(images), labels.astype(np.int64))


def split_indices(
    labels: np.ndarray, val_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded stratified partition of 0..N-1 into (train_idx, val_idx).

    The validation set gets round(val_fraction * N) samples, allocated per
    class by largest remainder so the class distribution matches the global
    one as closely as integer counts allow.
    """
    n = labels.shape[0]
    n_val = int(round(val_fraction * n))
    rng = np.random.default_rng([seed, 1])

    classes = np.unique(labels)
    per_class = [rng.permutation(np.flatnonzero(labels == c)) for c in classes]
    quotas = np.array([val_fraction * len(ix) for ix in per_class])
    take = np.floor(quotas).astype(int)
    remainder = n_val - take.sum()
    order = np.argsort(-(quotas - take), kind="stable")
    for i in order[:remainder]:
        take[i] += 1

    val_parts = [ix[:t] for ix, t in zip(per_class, take)]
    train_parts = [ix[t:] for ix, t in zip(per_class, take)]
    train_idx = np.sort(np.concatenate(train_parts))
    val_idx = np.sort(np.concatenate(val_parts))
    return train_idx, val_idx


def split(train: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Split the full 60k MNIST training set into 54k train / 6k validation."""
    if len(train) != 60000:
        raise ValueError(f"expected the full 60000-sample training set, got {len(train)}")
    train_idx, val_idx = split_indices(train.labels, 0.1, seed)
    return train.subset(train_idx), train.subset(val_idx)


class BatchIterator:
    """Seeded epoch shuffling; visits every index once, short tail included."""

    def __init__(self, n: int, batch_size: int, seed: int):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.n = n
        self.batch_size = batch_size
        self.seed = seed

    def epoch(self, epoch_index: int):
        perm = np.random.default_rng([self.seed, 3, epoch_index]).permutation(self.n)
        for start in range(0, self.n, self.batch_size):
            yield perm[start : start + self.batch_size]
