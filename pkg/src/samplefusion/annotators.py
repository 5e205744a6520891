"""Synthetic annotators and annotator-label files."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import (ConfigError, DimensionError, DuplicateEntryError, LabelFileError, LabelRangeError,
                     MissingEntryError)

LABEL_CSV_HEADER = ("sample_index", "annotator_id", "label")


@dataclass
class AnnotatorLabels:
    labels: np.ndarray  # (R, N) ints in [0, K)
    K: int
    provenance: str = "external"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 2:
            raise DimensionError(f"labels must be (R, N), got {self.labels.shape}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.K):
            raise ValueError(f"annotator labels out of range for K={self.K}")

    @property
    def R(self) -> int:
        return self.labels.shape[0]

    @property
    def N(self) -> int:
        return self.labels.shape[1]

    def take(self, idx) -> "AnnotatorLabels":
        return AnnotatorLabels(self.labels[:, idx], self.K, self.provenance)


def _wrong_labels(golden, K, u):
    """Map uniforms in [0, 1) to a label uniform over the K-1 classes != golden."""
    shift = 1 + np.minimum((u * (K - 1)).astype(np.int64), K - 2)
    return (golden + shift) % K


def synthesize_euclidean(features, golden, R: int, epsilon, seed: int, K: int | None = None) -> AnnotatorLabels:
    """Each annotator gets one weakness sample; labels within ``epsilon`` of it are corrupted.

    ``epsilon`` is one radius for everybody or a length-R sequence of radii.

    A corrupted label is uniform over the classes other than the golden one.
    The random streams are drawn up front (weakness indices, then an (R, N)
    block of uniforms), so corruption sets are nested in ``epsilon`` for a fixed seed.
    """
    X = np.asarray(features, dtype=float)
    golden = np.asarray(golden, dtype=np.int64)
    N = X.shape[0]
    if N == 0:
        raise ConfigError("cannot synthesize annotators for an empty dataset")
    if R > N:
        raise ConfigError(f"R={R} annotators need at least R samples, got {N}")
    eps = np.broadcast_to(np.asarray(epsilon, dtype=float), (R,)) if np.ndim(epsilon) == 0 else np.asarray(epsilon, float)
    if eps.shape != (R,):
        raise ConfigError(f"need one epsilon or {R} of them, got shape {eps.shape}")
    if np.any(np.isnan(eps)) or np.any(eps < 0):
        raise ConfigError(f"epsilon must be >= 0, got {epsilon}")
    K = int(golden.max()) + 1 if K is None else K
    rng = np.random.default_rng(seed)
    weak = rng.choice(N, size=R, replace=False)
    u = rng.random((R, N))
    dist = _distances_to(X, weak)
    labels = np.where(dist < eps[:, None], _wrong_labels(golden[None, :], K, u), golden[None, :])
    return AnnotatorLabels(labels, K, "euclidean")


def _distances_to(X, rows):
    sq = np.einsum("ij,ij->i", X, X)
    d = np.sqrt(np.maximum(sq[None, :] + sq[rows][:, None] - 2.0 * X[rows] @ X.T, 0.0))
    d[np.arange(len(rows)), rows] = 0.0
    return d


def weakness_distances(features, R: int, seed: int) -> np.ndarray:
    """(R, N) distances to each annotator's weakness sample, same draws as synthesize_euclidean."""
    X = np.asarray(features, dtype=float)
    weak = np.random.default_rng(seed).choice(X.shape[0], size=R, replace=False)
    return _distances_to(X, weak)


def calibrate_epsilon(features, R: int, seed: int, target_rate: float, per_annotator: bool = False):
    """Smallest epsilon whose corruption rate reaches ``target_rate``.

    Pooled (default): one float, judged on the mean rate over annotators.
    ``per_annotator``: an (R,) array, each annotator hitting the rate on its own.
    """
    if not 0 < target_rate <= 1:
        raise ConfigError(f"target corruption rate must be in (0, 1], got {target_rate}")
    dist = weakness_distances(features, R, seed)
    if per_annotator:
        d = np.sort(dist, axis=1)
        k = int(np.ceil(target_rate * d.shape[1]))
        return np.nextafter(d[:, k - 1], np.inf)
    # mean rate at epsilon = (#distances < epsilon) / (R N)
    d = np.sort(dist.ravel())
    k = int(np.ceil(target_rate * d.size))
    return float(np.nextafter(d[k - 1], np.inf))


def synthesize_hammer_spammer(golden, R: int, N_correct: int, K: int, seed: int) -> AnnotatorLabels:
    """Class-wise hammer/spammer annotators: exact on N_correct random classes, uniformly wrong elsewhere."""
    golden = np.asarray(golden, dtype=np.int64)
    if not 0 <= N_correct <= K:
        raise ConfigError(f"N_correct must be in [0, {K}], got {N_correct}")
    rng = np.random.default_rng(seed)
    hammer = np.zeros((R, K), dtype=bool)
    for r in range(R):
        hammer[r, rng.choice(K, size=N_correct, replace=False)] = True
    u = rng.random((R, golden.size))
    labels = np.where(hammer[:, golden], golden, _wrong_labels(golden, K, u))
    return AnnotatorLabels(labels, K, "hammer_spammer")


def corruption_rate(labels: AnnotatorLabels, golden) -> np.ndarray:
    golden = np.asarray(golden)
    if golden.shape != (labels.N,):
        raise DimensionError(f"{golden.shape} golden labels for {labels.N} annotated samples")
    return (labels.labels != golden[None, :]).mean(axis=1)


def load_external_labels(path, N: int, R: int, K: int) -> AnnotatorLabels:
    """Read ``sample_index,annotator_id,label`` rows; every (sample, annotator) pair exactly once."""
    labels = np.full((R, N), -1, dtype=np.int64)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != LABEL_CSV_HEADER:
            raise LabelFileError(f"expected header {','.join(LABEL_CSV_HEADER)}, got {header}", line=1)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise LabelFileError(f"expected 3 fields, got {len(row)}", line=line_no)
            try:
                n, r, y = (int(v) for v in row)
            except ValueError:
                raise LabelFileError(f"non-integer field in {row}", line=line_no) from None
            if not 0 <= n < N:
                raise LabelRangeError(f"sample index {n} outside [0, {N})", line=line_no)
            if not 0 <= r < R:
                raise LabelRangeError(f"annotator id {r} outside [0, {R})", line=line_no)
            if not 0 <= y < K:
                raise LabelRangeError(f"label {y} outside [0, {K})", line=line_no)
            if labels[r, n] >= 0:
                raise DuplicateEntryError(f"duplicate entry for sample {n}, annotator {r}", line=line_no)
            labels[r, n] = y
    missing = np.argwhere(labels < 0)
    if missing.size:
        r, n = missing[0]
        raise MissingEntryError(f"{len(missing)} (sample, annotator) pairs missing, first is sample {n}, annotator {r}")
    return AnnotatorLabels(labels, K, "external")


def write_external_labels(labels: AnnotatorLabels, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LABEL_CSV_HEADER)
        for n in range(labels.N):
            for r in range(labels.R):
                w.writerow([n, r, int(labels.labels[r, n])])
