import gzip
import struct

import numpy as np
import pytest

from codedfl.data import (
    DatasetError,
    LabeledData,
    load_mnist,
    partition_by_class,
    partition_iid,
    read_idx,
    synthetic_mixture,
)
from codedfl.rng import substream


def test_labeled_data_validation():
    with pytest.raises(ValueError):
        LabeledData(np.zeros((3, 2)), np.zeros(4, dtype=np.int64))
    with pytest.raises(ValueError):
        LabeledData(np.zeros(3), np.zeros(3, dtype=np.int64))


def test_synthetic_balanced_and_deterministic():
    a = synthetic_mixture(600, 10, 20, substream(3, "syn"))
    b = synthetic_mixture(600, 10, 20, substream(3, "syn"))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert np.all(np.bincount(a.y, minlength=10) == 60)
    with pytest.raises(DatasetError):
        synthetic_mixture(601, 10, 20, substream(3, "syn"))


def test_synthetic_classes_are_separable_in_mean():
    data = synthetic_mixture(2000, 4, 16, substream(3, "sep"), separation=4.0)
    centers = np.stack([data.x[data.y == c].mean(axis=0) for c in range(4)])
    gaps = np.linalg.norm(centers[:, None] - centers[None, :], axis=2)
    np.fill_diagonal(gaps, np.inf)
    assert gaps.min() > 1.0


def _write_idx(path, array):
    dims = struct.pack(f">{array.ndim}I", *array.shape)
    payload = b"\x00\x00\x08" + bytes([array.ndim]) + dims + array.tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(payload)


def test_read_idx_round_trip(tmp_path):
    rng = substream(3, "idx")
    images = rng.integers(256, size=(7, 5, 4)).astype(np.uint8)
    _write_idx(tmp_path / "imgs", images)
    assert np.array_equal(read_idx(tmp_path / "imgs"), images)
    _write_idx(tmp_path / "imgs.gz", images)
    assert np.array_equal(read_idx(tmp_path / "imgs.gz"), images)


def test_read_idx_rejects_bad_magic(tmp_path):
    (tmp_path / "bad").write_bytes(b"\x00\x00\x09\x01" + struct.pack(">I", 1) + b"\x00")
    with pytest.raises(DatasetError):
        read_idx(tmp_path / "bad")


def test_read_idx_rejects_truncation(tmp_path):
    payload = b"\x00\x00\x08\x01" + struct.pack(">I", 10) + b"\x00" * 9
    (tmp_path / "short").write_bytes(payload)
    with pytest.raises(DatasetError):
        read_idx(tmp_path / "short")


def test_load_mnist_layout(tmp_path):
    rng = substream(3, "mnist")
    images = rng.integers(256, size=(12, 3, 3)).astype(np.uint8)
    labels = rng.integers(10, size=12).astype(np.uint8)
    _write_idx(tmp_path / "train-images-idx3-ubyte", images)
    _write_idx(tmp_path / "train-labels-idx1-ubyte.gz", labels)
    data = load_mnist(tmp_path, "train", limit=10)
    assert data.x.shape == (10, 9)
    assert data.x.max() <= 1.0 and data.x.min() >= 0.0
    assert np.array_equal(data.y, labels[:10])
    with pytest.raises(DatasetError):
        load_mnist(tmp_path, "test")
    with pytest.raises(DatasetError):
        load_mnist(tmp_path, "validation")


def test_partition_iid_properties():
    data = synthetic_mixture(1000, 10, 8, substream(3, "iid"))
    part = partition_iid(data, 7, substream(3, "deal"))
    assert len(part) == 7
    sizes = {len(s) for s in part.shards}
    assert sizes == {142}
    seen = np.concatenate([s.x[:, 0] for s in part.shards])
    assert len(np.unique(seen)) == len(seen)  # disjoint samples
    hist = part.histogram(10)
    # iid shards stay near the balanced per-class expectation
    assert np.all(np.abs(hist - 14.2) < 14)


def test_partition_single_class_per_client():
    data = synthetic_mixture(1000, 10, 8, substream(3, "one"))
    part = partition_by_class(data, 10, 1, 10, substream(3, "deal1"))
    hist = part.histogram(10)
    for m in range(10):
        held = np.flatnonzero(hist[m])
        assert list(held) == [m]
        assert hist[m, m] == 100


def test_partition_five_classes_per_client():
    data = synthetic_mixture(2000, 10, 8, substream(3, "five"))
    part = partition_by_class(data, 10, 5, 10, substream(3, "deal5"))
    hist = part.histogram(10)
    assert np.all((hist > 0).sum(axis=1) == 5)
    # cyclic tiling serves every class to the same number of clients
    assert np.all((hist > 0).sum(axis=0) == 5)
    assert len({len(s) for s in part.shards}) == 1


def test_partition_infeasible_combinations():
    data = synthetic_mixture(400, 4, 8, substream(3, "bad"))
    with pytest.raises(DatasetError):
        partition_by_class(data, 3, 2, 4, substream(3, "deal"))
    with pytest.raises(DatasetError):
        partition_by_class(data, 4, 5, 4, substream(3, "deal"))
