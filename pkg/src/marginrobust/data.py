"""Datasets: MNIST IDX files, synthetic Gaussian blobs, subsampling, minibatches."""

from __future__ import annotations

import csv
import gzip
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .exceptions import ConfigurationError, DomainError, IngestionError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = "dataset"

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or len(x) != len(y):
            raise ConfigurationError(f"features {x.shape} and labels {y.shape} do not line up")
        if len(y) < 1:
            raise DomainError("a dataset needs at least one example")
        if np.any(y < 0) or np.any(y >= self.class_count):
            raise ConfigurationError(f"labels must lie in [0, {self.class_count})")
        if not np.all(np.isfinite(x)):
            raise ConfigurationError("features must be finite")
        object.__setattr__(self, "features", np.clip(x, 0.0, 1.0))
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, indices, name: Optional[str] = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.class_count, name or self.name)


@dataclass(frozen=True, eq=False)
class Batch:
    """Inputs and labels plus each example's index in its parent dataset."""

    inputs: np.ndarray
    labels: np.ndarray
    indices: np.ndarray

    def __len__(self):
        return len(self.labels)


def as_batch(data: Dataset) -> Batch:
    return Batch(data.features, data.labels, np.arange(len(data)))


# -- IDX ---------------------------------------------------------------------

def _open_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx_images(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = _open_bytes(path)
    except OSError as exc:
        raise IngestionError(f"{path}: cannot read ({exc})") from exc
    if len(raw) < 16:
        raise IngestionError(f"{path}: truncated header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise IngestionError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    if len(raw) != 16 + n * rows * cols:
        raise IngestionError(f"{path}: expected {n * rows * cols} pixel bytes, found {len(raw) - 16}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = _open_bytes(path)
    except OSError as exc:
        raise IngestionError(f"{path}: cannot read ({exc})") from exc
    if len(raw) < 8:
        raise IngestionError(f"{path}: truncated header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise IngestionError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(raw) != 8 + n:
        raise IngestionError(f"{path}: expected {n} label bytes, found {len(raw) - 8}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8)


def load_mnist_idx(images_path, labels_path, class_count: int = 10, name: str = "mnist") -> Dataset:
    """Load an IDX image/label pair; pixels are scaled to [0, 1] by /255."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IngestionError(
            f"{labels_path}: {len(labels)} labels but {images_path} holds {len(images)} images"
        )
    if len(labels) and labels.max() >= class_count:
        raise IngestionError(f"{labels_path}: label {labels.max()} outside [0, {class_count})")
    x = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), class_count, name)


def write_idx_images(images, path) -> None:
    """Write uint8 images of shape (n, rows, cols) as an uncompressed IDX file."""
    a = np.asarray(images)
    if a.dtype != np.uint8 or a.ndim != 3:
        raise ConfigurationError("IDX images must be a uint8 array of shape (n, rows, cols)")
    Path(path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, *a.shape) + a.tobytes())


def write_idx_labels(labels, path) -> None:
    a = np.asarray(labels)
    if a.ndim != 1 or a.min(initial=0) < 0 or a.max(initial=0) > 255:
        raise ConfigurationError("IDX labels must be a 1-D array of bytes")
    Path(path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(a)) + a.astype(np.uint8).tobytes())


def write_mnist_idx(data: Dataset, images_path, labels_path, shape=None) -> None:
    """Write a Dataset back to IDX; features are quantized to bytes (round(255 x))."""
    n, d = data.features.shape
    if shape is None:
        side = int(round(np.sqrt(d)))
        shape = (side, side) if side * side == d else (1, d)
    pixels = np.rint(data.features * 255.0).astype(np.uint8).reshape(n, *shape)
    write_idx_images(pixels, images_path)
    write_idx_labels(data.labels, labels_path)


def export_bundled_mnist(out_dir, n_train: int = 2000, n_test: int = 1000, seed: int = 0) -> dict:
    """Write a train/test IDX split of the 5000 MNIST digits shipped with mlxtend.

    The official MNIST archives cannot always be downloaded; mlxtend's
    ``mnist_5k`` file contains 5000 genuine MNIST test-set digits as CSV.
    Requires the optional ``mlxtend`` dependency.
    """
    from importlib import resources

    raw = (resources.files("mlxtend") / "data" / "data" / "mnist_5k.csv.gz").read_bytes()
    table = np.loadtxt(io.StringIO(gzip.decompress(raw).decode()), delimiter=",", dtype=np.int64)
    pixels, labels = table[:, :-1].astype(np.uint8), table[:, -1]
    if n_train + n_test > len(labels):
        raise DomainError(f"requested {n_train + n_test} examples, only {len(labels)} bundled")
    order = np.random.default_rng(seed).permutation(len(labels))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split, idx in (("train", order[:n_train]), ("test", order[n_train:n_train + n_test])):
        img, lab = out / f"{split}-images-idx3-ubyte", out / f"{split}-labels-idx1-ubyte"
        write_idx_images(pixels[idx].reshape(-1, 28, 28), img)
        write_idx_labels(labels[idx], lab)
        paths[split] = (img, lab)
    return paths


# -- synthetic data ------------------------------------------------------------

def synth_gaussians(n_per_class: int, centers, sigma: float, seed: int = 0, name: str = "gaussians") -> Dataset:
    c = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if n_per_class < 1:
        raise DomainError("need at least one example per class")
    rng = np.random.default_rng(seed)
    k, d = c.shape
    x = np.repeat(c, n_per_class, axis=0) + sigma * rng.standard_normal((k * n_per_class, d))
    y = np.repeat(np.arange(k), n_per_class)
    return Dataset(np.clip(x, 0.0, 1.0), y, k, name)


def save_csv(data: Dataset, path) -> None:
    """One row per example: label first, then features (repr-exact floats)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"x{j}" for j in range(data.n_features)])
        for label, row in zip(data.labels, data.features):
            w.writerow([int(label)] + [repr(float(v)) for v in row])


def load_csv(path, class_count: Optional[int] = None, name: Optional[str] = None) -> Dataset:
    path = Path(path)
    try:
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    labels = table[:, 0].astype(np.int64)
    k = class_count if class_count is not None else int(labels.max()) + 1
    return Dataset(table[:, 1:], labels, k, name or path.stem)


# -- sampling ------------------------------------------------------------------

def subsample(data: Dataset, n: int, seed: int = 0) -> Dataset:
    """Uniform sample without replacement; kept in original order."""
    if not 1 <= n <= len(data):
        raise DomainError(f"cannot draw {n} examples from a dataset of {len(data)}")
    idx = np.sort(np.random.default_rng(seed).choice(len(data), size=n, replace=False))
    return data.take(idx)


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def minibatches(data: Dataset, m: int, seed: int = 0, epoch: int = 0) -> List[Batch]:
    if m < 1:
        raise DomainError("batch size must be at least 1")
    perm = epoch_permutation(len(data), seed, epoch)
    return [Batch(data.features[idx], data.labels[idx], idx)
            for idx in (perm[i:i + m] for i in range(0, len(perm), m))]
