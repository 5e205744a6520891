"""Datasets: the modified TwoMoon problem, MNIST IDX files, splits and scaling."""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .annotators import AnnotatorLabels
from .errors import ConfigError, CountMismatchError, DimensionError, FormatError, TruncatedFileError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# The moons are shifted by MOON_CENTER so the vertical and horizontal midlines
# are the coordinate axes.  The upper moon is class 1; annotator 1 labels x < 0
# as 1 and annotator 2 labels y > y_threshold as 1.  Each annotator is then wrong
# on two separate patches, and both are wrong on two tips.
MOON_CENTER = (0.5, 0.25)
UPPER_CLASS = 1
LOWER_CLASS = 1 - UPPER_CLASS
DEFAULT_Y_THRESHOLD = 0.0


@dataclass
class Dataset:
    features: np.ndarray
    golden: np.ndarray | None = None
    annotators: AnnotatorLabels | None = None
    K: int = 2
    split_tag: str = "all"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2:
            raise DimensionError(f"features must be 2-D, got shape {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        n = self.features.shape[0]
        if self.golden is not None:
            self.golden = np.asarray(self.golden, dtype=np.int64)
            if self.golden.shape != (n,):
                raise DimensionError(f"{self.golden.shape[0]} golden labels for {n} samples")
            if n and (self.golden.min() < 0 or self.golden.max() >= self.K):
                raise ValueError(f"golden labels out of range for K={self.K}")
        if self.annotators is not None and self.annotators.N != n:
            raise DimensionError(f"annotator labels cover {self.annotators.N} samples, dataset has {n}")

    @property
    def N(self) -> int:
        return self.features.shape[0]

    def subset(self, idx, split_tag: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            features=self.features[idx],
            golden=None if self.golden is None else self.golden[idx],
            annotators=None if self.annotators is None else self.annotators.take(idx),
            K=self.K,
            split_tag=split_tag or self.split_tag,
        )


def two_moon_annotator_labels(points, y_threshold: float = DEFAULT_Y_THRESHOLD) -> np.ndarray:
    """(2, N) labels of the vertical-view and horizontal-view annotators."""
    pts = np.asarray(points, dtype=float)
    ant1 = (pts[:, 0] < 0).astype(np.int64)
    ant2 = (pts[:, 1] > y_threshold).astype(np.int64)
    return np.stack([ant1, ant2])


def generate_two_moon(n: int = 20000, noise_sigma: float = 0.1, seed: int = 0,
                      y_threshold: float = DEFAULT_Y_THRESHOLD) -> Dataset:
    """Two interleaved half circles with two geometric annotators attached.

    Upper branch (cos t, sin t), lower branch (1 - cos t, 0.5 - sin t), t ~ U[0, pi],
    plus isotropic Gaussian noise, then translated by -MOON_CENTER.  The first
    n/2 rows are the upper branch.
    """
    if n <= 0 or n % 2:
        raise ConfigError(f"n must be a positive even integer, got {n}")
    if noise_sigma < 0:
        raise ConfigError(f"noise_sigma must be >= 0, got {noise_sigma}")
    rng = np.random.default_rng(seed)
    half = n // 2
    t_up = rng.uniform(0.0, np.pi, half)
    t_lo = rng.uniform(0.0, np.pi, half)
    upper = np.column_stack([np.cos(t_up), np.sin(t_up)])
    lower = np.column_stack([1.0 - np.cos(t_lo), 0.5 - np.sin(t_lo)])
    pts = np.concatenate([upper, lower]) + noise_sigma * rng.standard_normal((n, 2)) - np.asarray(MOON_CENTER)
    golden = np.concatenate([np.full(half, UPPER_CLASS), np.full(half, LOWER_CLASS)])
    ann = AnnotatorLabels(two_moon_annotator_labels(pts, y_threshold), K=2, provenance="twomoon")
    return Dataset(features=pts, golden=golden, annotators=ann, K=2)


def export_two_moon_csv(ds: Dataset, path) -> None:
    """Write ``x,y,golden,ant1,ant2`` rows for external plotting."""
    if ds.features.shape[1] != 2 or ds.annotators is None or ds.annotators.R != 2:
        raise DimensionError("export needs 2-D features and two annotators")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "golden", "ant1", "ant2"])
        gold = ds.golden if ds.golden is not None else np.full(ds.N, -1)
        for (x, y), g, a1, a2 in zip(ds.features, gold, *ds.annotators.labels):
            w.writerow([repr(float(x)), repr(float(y)), int(g), int(a1), int(a2)])


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, expected_magic, header_dims):
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}")
    hdr = 4 + 4 * header_dims
    if len(raw) < hdr:
        raise TruncatedFileError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{header_dims}I", raw[4:hdr])
    need = int(np.prod(dims))
    body = np.frombuffer(raw, dtype=np.uint8, offset=hdr)
    if body.size < need:
        raise TruncatedFileError(f"{path}: expected {need} data bytes, found {body.size}")
    return body[:need].reshape(dims)


def read_idx_images(path) -> np.ndarray:
    return _read_idx(path, IDX_IMAGES_MAGIC, 3)


def read_idx_labels(path) -> np.ndarray:
    return _read_idx(path, IDX_LABELS_MAGIC, 1)


def write_idx(path, array) -> None:
    """Write a uint8 array of rank 1 (labels) or 3 (images) in IDX format."""
    a = np.asarray(array)
    if a.dtype != np.uint8 or a.ndim not in (1, 3):
        raise FormatError("IDX writer handles uint8 arrays of rank 1 or 3")
    magic = IDX_LABELS_MAGIC if a.ndim == 1 else IDX_IMAGES_MAGIC
    payload = struct.pack(f">I{a.ndim}I", magic, *a.shape) + np.ascontiguousarray(a).tobytes()
    opener = gzip.open if Path(path).suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(payload)


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label pair (optionally gzipped) into a [0, 1]-scaled Dataset."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    feats = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return Dataset(features=feats, golden=labels.astype(np.int64), K=10)


def split(ds: Dataset, sizes, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    n_train, n_val, n_test = (int(s) for s in sizes)
    if min(n_train, n_val, n_test) < 0 or n_train + n_val + n_test > ds.N:
        raise ConfigError(f"split sizes {sizes} oversubscribe {ds.N} samples")
    idx = np.random.default_rng(seed).permutation(ds.N)
    a, b = n_train, n_train + n_val
    return (ds.subset(idx[:a], "train"), ds.subset(idx[a:b], "val"),
            ds.subset(idx[b:b + n_test], "test"))


def standardize(train: Dataset, *others: Dataset, stats=None):
    """Per-feature z-scoring with train statistics (std floored at 1e-6).

    Returns ``(standardized datasets..., (mean, std))``.  Passing ``stats`` reuses them.
    """
    if stats is None:
        if train.N == 0:
            raise ValueError("cannot standardize on an empty training split")
        mean = train.features.mean(axis=0)
        std = np.maximum(train.features.std(axis=0), 1e-6)
    else:
        mean, std = stats
    out = [replace(d, features=(d.features - mean) / std) for d in (train, *others)]
    return (*out, (mean, std))
