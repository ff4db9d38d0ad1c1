import gzip
import os
import struct
from pathlib import Path

import numpy as np
import pytest

from bcmem.data_mnist import Dataset

# fixed class centers shared by every synthetic dataset so train/test
# splits describe the same classification problem
_CENTERS = np.random.default_rng(999).random((10, 784)) * 0.9


def make_blobs(n: int, seed: int = 0, noise: float = 0.05) -> Dataset:
    """Linearly separable 10-class stand-in for MNIST-sized data."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, size=n)
    images = np.clip(_CENTERS[labels] + noise * rng.standard_normal((n, 784)), 0.0, 1.0)
    return Dataset(images, labels.astype(np.int64))


def idx_images_bytes(images_u8: np.ndarray) -> bytes:
    n = images_u8.shape[0]
    return struct.pack(">IIII", 0x00000803, n, 28, 28) + images_u8.astype(np.uint8).tobytes()


def idx_labels_bytes(labels_u8: np.ndarray) -> bytes:
    return struct.pack(">II", 0x00000801, labels_u8.shape[0]) + labels_u8.astype(np.uint8).tobytes()


def write_idx_dir(path: Path, train: Dataset, test: Dataset, compress: bool = False) -> Path:
    """Materialize two Datasets as the four standard IDX files."""
    path.mkdir(parents=True, exist_ok=True)
    pairs = [
        ("train-images-idx3-ubyte", idx_images_bytes(np.round(train.images * 255))),
        ("train-labels-idx1-ubyte", idx_labels_bytes(train.labels)),
        ("t10k-images-idx3-ubyte", idx_images_bytes(np.round(test.images * 255))),
        ("t10k-labels-idx1-ubyte", idx_labels_bytes(test.labels)),
    ]
    for name, data in pairs:
        if compress:
            (path / (name + ".gz")).write_bytes(gzip.compress(data))
        else:
            (path / name).write_bytes(data)
    return path


@pytest.fixture(scope="session")
def mnist_dir():
    """Directory with the real MNIST IDX files, else skip.

    Looked up from $BCMEM_MNIST_DIR or <repo>/data/mnist.
    """
    candidates = []
    if os.environ.get("BCMEM_MNIST_DIR"):
        candidates.append(Path(os.environ["BCMEM_MNIST_DIR"]))
    candidates.append(Path(__file__).resolve().parent.parent / "data" / "mnist")
    for cand in candidates:
        if any(cand.glob("train-images-idx3-ubyte*")):
            return cand
    pytest.skip(
        "real MNIST IDX files not found; set BCMEM_MNIST_DIR or place the four "
        "files under data/mnist/ (this sandbox has no network access to fetch them)"
    )
