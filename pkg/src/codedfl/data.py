"""Datasets and client partitions.

Two sources: a fully reproducible synthetic Gaussian mixture (default) and
MNIST in IDX format when image/label files are available locally. Both
feed the same partitioners, which guarantee equal shard sizes so every
client carries identical weight in aggregation.
"""

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed dataset files or infeasible partitions."""


@dataclass(frozen=True)
class LabeledData:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError("x must be (n, d) with one label per row")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx: np.ndarray) -> "LabeledData":
        return LabeledData(self.x[idx], self.y[idx])


@dataclass(frozen=True)
class DatasetPartition:
    """Disjoint equal-size shards, one per client."""

    shards: tuple

    def __post_init__(self):
        sizes = {len(s) for s in self.shards}
        if len(sizes) != 1:
            raise DatasetError(f"shards must be equal-size, got {sorted(sizes)}")

    def __len__(self) -> int:
        return len(self.shards)

    def histogram(self, n_classes: int) -> np.ndarray:
        return np.stack(
            [np.bincount(s.y, minlength=n_classes) for s in self.shards]
        )


def mixture_means(
    n_classes: int,
    n_features: int,
    separation: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Random unit directions scaled by ``separation``, one per class."""
    means = rng.standard_normal((n_classes, n_features))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    return means


def synthetic_mixture(
    n_samples: int,
    n_classes: int,
    n_features: int,
    rng: np.random.Generator,
    separation: float = 3.0,
    noise: float = 1.0,
    means: np.ndarray | None = None,
) -> LabeledData:
    """Isotropic Gaussian blobs with exactly balanced class counts.

    Class means are random unit directions scaled by ``separation``; the
    draw order (means, then labels, then noise) is fixed so a seeded
    stream reproduces the dataset bit-for-bit. Pass ``means`` to sample
    several splits from one distribution (``separation`` is then ignored).
    """
    if n_samples % n_classes != 0:
        raise DatasetError(
            f"{n_samples} samples cannot balance over {n_classes} classes"
        )
    if means is None:
        means = mixture_means(n_classes, n_features, separation, rng)
    elif means.shape != (n_classes, n_features):
        raise DatasetError(
            f"means must be ({n_classes}, {n_features}), got {means.shape}"
        )
    y = rng.permutation(np.repeat(np.arange(n_classes), n_samples // n_classes))
    x = means[y] + noise * rng.standard_normal((n_samples, n_features))
    return LabeledData(x, y)


def _open_maybe_gzip(path: Path):
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read one IDX file (unsigned-byte payload, big-endian header)."""
    with _open_maybe_gzip(Path(path)) as fh:
        header = fh.read(4)
        if len(header) != 4 or header[:2] != b"\x00\x00" or header[2] != 0x08:
            raise DatasetError(f"{path}: not an unsigned-byte IDX file")
        ndim = header[3]
        dims = struct.unpack(f">{ndim}I", fh.read(4 * ndim))
        payload = fh.read()
    expected = int(np.prod(dims))
    if len(payload) != expected:
        raise DatasetError(f"{path}: expected {expected} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find_idx(root: Path, stem: str) -> Path:
    for candidate in (root / stem, root / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    raise DatasetError(f"missing {stem}[.gz] under {root}")


def load_mnist(root, split: str = "train", limit: int | None = None) -> LabeledData:
    """Load an MNIST split from IDX files, flattened and scaled to [0, 1]."""
    if split not in _MNIST_FILES:
        raise DatasetError(f"split must be train or test, got {split!r}")
    image_stem, label_stem = _MNIST_FILES[split]
    images = read_idx(_find_idx(Path(root), image_stem))
    labels = read_idx(_find_idx(Path(root), label_stem))
    if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise DatasetError("image/label shapes disagree")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return LabeledData(x, labels.astype(np.int64))


def partition_iid(
    data: LabeledData, n_clients: int, rng: np.random.Generator
) -> DatasetPartition:
    """Shuffle and deal equal shards; a remainder below n_clients is dropped."""
    per = len(data) // n_clients
    if per == 0:
        raise DatasetError(f"{len(data)} samples cannot feed {n_clients} clients")
    order = rng.permutation(len(data))
    shards = tuple(
        data.subset(np.sort(order[m * per : (m + 1) * per]))
        for m in range(n_clients)
    )
    return DatasetPartition(shards)


def partition_by_class(
    data: LabeledData,
    n_clients: int,
    classes_per_client: int,
    n_classes: int,
    rng: np.random.Generator,
) -> DatasetPartition:
    """Cyclic label assignment: client m holds classes {(m*k + j) mod C}.

    Requires n_clients*k to be a multiple of C so every class serves the
    same number of clients; each class's samples are split evenly among
    its holders, truncated to a common quota to keep shards equal.
    """
    k, c = classes_per_client, n_classes
    if not 1 <= k <= c:
        raise DatasetError(f"classes_per_client must be in [1, {c}], got {k}")
    if (n_clients * k) % c != 0:
        raise DatasetError(
            f"{n_clients} clients x {k} classes cannot tile {c} classes evenly"
        )
    holders_per_class = n_clients * k // c
    by_class = []
    for label in range(c):
        idx = np.flatnonzero(data.y == label)
        if idx.size == 0:
            raise DatasetError(f"class {label} has no samples")
        by_class.append(rng.permutation(idx))
    quota = min(idx.size // holders_per_class for idx in by_class)
    if quota == 0:
        raise DatasetError("not enough samples per class to fill every client")
    cursors = [0] * c
    shards = []
    for m in range(n_clients):
        take = []
        for j in range(k):
            label = (m * k + j) % c
            start = cursors[label]
            take.append(by_class[label][start : start + quota])
            cursors[label] = start + quota
        shards.append(data.subset(np.sort(np.concatenate(take))))
    return DatasetPartition(tuple(shards))
