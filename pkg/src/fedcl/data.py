"""Datasets: Gaussian blobs, MNIST IDX files, Dirichlet label-skew partitions."""
from __future__ import annotations

import gzip
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DATASET_MAGIC = b"FCLDS1"


class IdxError(ValueError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedFileError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or len(x) != len(y) or len(y) < 1:
            raise ValueError("dataset needs n >= 1 rows with one label each")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError("label outside [0, num_classes)")
        if not np.isfinite(x).all():
            raise ValueError("features must be finite")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def make_blobs(classes, per_class, dim, spread, seed=0) -> Dataset:
    """Isotropic Gaussian classes with centres on a random sphere of radius 5."""
    if classes < 2 or per_class < 1:
        raise ValueError("need at least two classes and one sample per class")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    centres = rng.standard_normal((classes, dim))
    centres *= 5.0 / np.linalg.norm(centres, axis=1, keepdims=True)
    labels = np.repeat(np.arange(classes), per_class)
    x = centres[labels] + spread * rng.standard_normal((len(labels), dim))
    return Dataset(x, labels, classes)


def stratified_split(ds: Dataset, test_fraction, seed=0):
    """Split each class in the same proportion; returns ``(train, test)``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    train, test = [], []
    for c in range(ds.num_classes):
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        k = int(round(test_fraction * len(idx)))
        test.append(idx[:k])
        train.append(idx[k:])
    return ds.subset(np.sort(np.concatenate(train))), ds.subset(np.sort(np.concatenate(test)))


def random_subset(ds: Dataset, count, seed=0) -> Dataset:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if count >= len(ds):
        return ds
    return ds.subset(np.sort(rng.choice(len(ds), size=count, replace=False)))


def dirichlet_partition(ds: Dataset, num_clients, alpha, seed=0):
    """Per-class Dirichlet split of sample indices across clients.

    Each class's shuffled indices are cut by proportions drawn from
    ``Dir(alpha * 1_K)``. Clients left empty take one sample from the
    currently largest client.
    """
    if num_clients < 1:
        raise ValueError("need at least one client")
    if not alpha > 0:
        raise ValueError("Dirichlet concentration must be positive")
    if len(ds) < num_clients:
        raise ValueError(f"{len(ds)} samples cannot cover {num_clients} clients")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    parts = [[] for _ in range(num_clients)]
    for c in range(ds.num_classes):
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        if len(idx) == 0:
            continue
        props = rng.dirichlet(np.full(num_clients, float(alpha)))
        cuts = (np.cumsum(props) * len(idx)).astype(int)[:-1]
        for k, chunk in enumerate(np.split(idx, cuts)):
            parts[k].extend(chunk.tolist())
    for k in range(num_clients):
        if not parts[k]:
            donor = max(range(num_clients), key=lambda j: len(parts[j]))
            parts[k].append(parts[donor].pop())
    return [np.array(sorted(p), dtype=np.int64) for p in parts]


def partition_hash(partition) -> str:
    h = hashlib.sha256()
    for part in partition:
        h.update(np.asarray(part, dtype="<i8").tobytes())
        h.update(b"|")
    return h.hexdigest()[:16]


def label_entropy(ds: Dataset, partition) -> float:
    """Mean Shannon entropy (nats) of the per-client label distributions."""
    ents = []
    for part in partition:
        p = np.bincount(ds.labels[part], minlength=ds.num_classes) / len(part)
        p = p[p > 0]
        ents.append(float(-(p * np.log(p)).sum()))
    return float(np.mean(ents))


# -- IDX --------------------------------------------------------------------

def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, expected_magic):
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: shorter than the IDX magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: header cut short")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    need = int(np.prod(dims))
    if len(raw) - header < need:
        raise TruncatedFileError(f"{path}: {len(raw) - header} data bytes, header promises {need}")
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes=10) -> Dataset:
    """Parse an IDX image/label pair; pixels are scaled to [0, 1]."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), num_classes)


def write_idx(path, array: np.ndarray):
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(array.tobytes())


_MNIST_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist(directory, split):
    d = Path(directory)
    out = []
    for name in _MNIST_NAMES[split]:
        for cand in (d / name, d / (name + ".gz")):
            if cand.exists():
                out.append(cand)
                break
        else:
            return None
    return tuple(out)


def load_mnist(directory, split="train") -> Dataset:
    paths = find_mnist(directory, split)
    if paths is None:
        raise FileNotFoundError(f"MNIST {split} files not found in {directory}")
    return load_idx(*paths)


# -- headered binary for fixtures --------------------------------------------

def save_dataset(ds: Dataset, path):
    """``FCLDS1`` | u32 n | u32 dim | u32 classes | f8[n*dim] | i8[n], little-endian."""
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<III", len(ds), ds.dim, ds.num_classes))
        fh.write(ds.features.astype("<f8").tobytes())
        fh.write(ds.labels.astype("<i8").tobytes())


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:6] != DATASET_MAGIC:
        raise BadMagicError(f"{path}: not an FCLDS1 dataset file")
    n, dim, classes = struct.unpack("<III", raw[6:18])
    body = 18 + 8 * n * dim
    if len(raw) < body + 8 * n:
        raise TruncatedFileError(f"{path}: truncated dataset body")
    x = np.frombuffer(raw, dtype="<f8", count=n * dim, offset=18).reshape(n, dim)
    y = np.frombuffer(raw, dtype="<i8", count=n, offset=body)
    return Dataset(x.astype(np.float64), y.astype(np.int64), classes)
