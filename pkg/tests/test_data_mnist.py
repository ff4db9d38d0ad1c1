import gzip

import numpy as np
import pytest

from bcmem.data_mnist import (
    BatchIterator,
    Dataset,
    IdxDimensionError,
    IdxError,
    IdxMagicError,
    IdxSizeError,
    load_split,
    normalize,
    parse_idx_images,
    parse_idx_labels,
    split,
    split_indices,
)
from conftest import idx_images_bytes, idx_labels_bytes, make_blobs, write_idx_dir


# --- parsing ---------------------------------------------------------------

def test_images_round_trip():
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, size=(2, 784), dtype=np.uint8)
    parsed = parse_idx_images(idx_images_bytes(imgs))
    assert np.array_equal(parsed, imgs)


def test_labels_round_trip():
    labels = np.array([3, 1, 4, 1, 5, 9], dtype=np.uint8)
    assert np.array_equal(parse_idx_labels(idx_labels_bytes(labels)), labels)


def test_wrong_magic_rejected():
    data = bytearray(idx_images_bytes(np.zeros((1, 784), dtype=np.uint8)))
    data[3] = 0x02  # 0x00000802
    with pytest.raises(IdxMagicError):
        parse_idx_images(bytes(data))


def test_wrong_dimensions_rejected():
    import struct

    payload = bytes(27 * 28)
    data = struct.pack(">IIII", 0x803, 1, 27, 28) + payload
    with pytest.raises(IdxDimensionError):
        parse_idx_images(data)


def test_truncated_and_oversize_payload_rejected():
    good = idx_images_bytes(np.zeros((2, 784), dtype=np.uint8))
    with pytest.raises(IdxSizeError):
        parse_idx_images(good[:-5])
    with pytest.raises(IdxSizeError):
        parse_idx_images(good + b"\x00")
    lab = idx_labels_bytes(np.zeros(4, dtype=np.uint8))
    with pytest.raises(IdxSizeError):
        parse_idx_labels(lab[:-1])


def test_label_value_range_checked():
    import struct

    data = struct.pack(">II", 0x801, 2) + bytes([4, 11])
    with pytest.raises(IdxError):
        parse_idx_labels(data)


def test_header_fuzz_images_all_single_byte_mutations():
    imgs = np.random.default_rng(1).integers(0, 256, size=(3, 784), dtype=np.uint8)
    good = idx_images_bytes(imgs)
    for pos in range(16):
        for delta in range(1, 256):
            mutated = bytearray(good)
            mutated[pos] = (mutated[pos] + delta) % 256
            with pytest.raises(IdxError) as exc:
                parse_idx_images(bytes(mutated))
            if pos < 4:
                assert isinstance(exc.value, IdxMagicError)
            elif pos < 8:
                assert isinstance(exc.value, IdxSizeError)
            else:
                assert isinstance(exc.value, IdxDimensionError)


def test_header_fuzz_labels_all_single_byte_mutations():
    good = idx_labels_bytes(np.array([1, 2, 3], dtype=np.uint8))
    for pos in range(8):
        for delta in range(1, 256):
            mutated = bytearray(good)
            mutated[pos] = (mutated[pos] + delta) % 256
            with pytest.raises(IdxError) as exc:
                parse_idx_labels(bytes(mutated))
            expected = IdxMagicError if pos < 4 else IdxSizeError
            assert isinstance(exc.value, expected)


def test_normalize():
    pixels = np.array([0, 128, 255], dtype=np.uint8)
    out = normalize(pixels)
    assert out[0] == 0.0
    assert out[1] == pytest.approx(128 / 255)
    assert out[2] == 1.0


def test_load_split_plain_and_gzip(tmp_path):
    train = make_blobs(40, seed=0)
    test = make_blobs(12, seed=1)
    plain = write_idx_dir(tmp_path / "plain", train, test)
    gz = write_idx_dir(tmp_path / "gz", train, test, compress=True)
    for root in (plain, gz):
        ds = load_split(root, "train")
        assert len(ds) == 40
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
        assert len(load_split(root, "test")) == 12
    with pytest.raises(FileNotFoundError):
        load_split(tmp_path / "missing", "train")
    with pytest.raises(ValueError):
        load_split(plain, "validation")


def test_official_counts(mnist_dir):
    assert len(load_split(mnist_dir, "train")) == 60000
    assert len(load_split(mnist_dir, "test")) == 10000


# --- splitting -------------------------------------------------------------

def _uneven_labels(n=60000, seed=3):
    # roughly MNIST-like uneven class sizes
    rng = np.random.default_rng(seed)
    labels = rng.choice(10, size=n, p=np.array([9, 11, 10, 10, 10, 9, 10, 10, 11, 10]) / 100)
    return labels.astype(np.int64)


def test_split_indices_stratified_exact():
    labels = _uneven_labels()
    train_idx, val_idx = split_indices(labels, 0.1, seed=0)
    assert train_idx.size == 54000 and val_idx.size == 6000
    assert np.array_equal(np.sort(np.concatenate([train_idx, val_idx])), np.arange(60000))
    for c in range(10):
        global_frac = (labels == c).mean()
        val_frac = (labels[val_idx] == c).mean()
        assert abs(val_frac - global_frac) <= 0.015


def test_split_indices_deterministic_and_seed_sensitive():
    labels = _uneven_labels()
    a = split_indices(labels, 0.1, seed=5)
    b = split_indices(labels, 0.1, seed=5)
    c = split_indices(labels, 0.1, seed=6)
    assert np.array_equal(a[1], b[1])
    assert not np.array_equal(a[1], c[1])


def test_split_requires_full_training_set():
    ds = Dataset(np.zeros((100, 784)), np.zeros(100, dtype=np.int64))
    with pytest.raises(ValueError):
        split(ds, seed=0)


def test_split_full_sized():
    labels = _uneven_labels()
    ds = Dataset(np.zeros((60000, 784)), labels)
    tr, va = split(ds, seed=1)
    assert len(tr) == 54000 and len(va) == 6000


def test_dataset_validates_lengths():
    with pytest.raises(ValueError):
        Dataset(np.zeros((5, 784)), np.zeros(4, dtype=np.int64))


# --- batching --------------------------------------------------------------

def test_batch_iterator_visits_everything_once():
    it = BatchIterator(103, 32, seed=0)
    batches = list(it.epoch(0))
    assert [len(b) for b in batches] == [32, 32, 32, 7]
    assert np.array_equal(np.sort(np.concatenate(batches)), np.arange(103))


def test_batch_iterator_epoch_and_seed_behaviour():
    it = BatchIterator(50, 16, seed=9)
    e0 = np.concatenate(list(it.epoch(0)))
    e1 = np.concatenate(list(it.epoch(1)))
    assert not np.array_equal(e0, e1)
    again = np.concatenate(list(BatchIterator(50, 16, seed=9).epoch(0)))
    assert np.array_equal(e0, again)
    with pytest.raises(ValueError):
        BatchIterator(10, 0, seed=0)
