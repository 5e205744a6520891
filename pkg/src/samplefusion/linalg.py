"""Simplex utilities, permutation bases and confusion-matrix reconstruction."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DimensionError, InfeasibleBasisError, InvalidLabelError, NumericError

DEFAULT_TOL = 1e-9


def one_hot(class_index: int, K: int) -> np.ndarray:
    if K < 2:
        raise InvalidLabelError(f"K must be >= 2, got {K}")
    if not 0 <= class_index < K:
        raise InvalidLabelError(f"class index {class_index} out of range for K={K}")
    v = np.zeros(K)
    v[class_index] = 1.0
    return v


def one_hot_rows(labels, K: int) -> np.ndarray:
    """Vectorised one-hot: integer array of any shape -> shape + (K,)."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise InvalidLabelError(f"labels out of range for K={K}")
    return (labels[..., None] == np.arange(K)).astype(float)


def softmax(logits, axis: int = -1) -> np.ndarray:
    """Max-shifted softmax along ``axis``."""
    z = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax received non-finite logits")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax_backward(probs: np.ndarray, grad: np.ndarray, axis: int = -1) -> np.ndarray:
    """Pull a gradient w.r.t. softmax outputs back to the logits."""
    return probs * (grad - (probs * grad).sum(axis=axis, keepdims=True))


@dataclass(frozen=True)
class PermutationBasis:
    """Fixed set of M distinct K x K permutation matrices.

    ``perm[m, j]`` is the row holding the single 1 of column ``j`` in matrix ``m``,
    so ``B_m @ e_j = e_{perm[m, j]}``.
    """

    K: int
    M: int
    perm: np.ndarray
    seed: int | None = None
    include_identity: bool = True

    @property
    def matrices(self) -> np.ndarray:
        B = np.zeros((self.M, self.K, self.K))
        m_idx = np.repeat(np.arange(self.M), self.K)
        cols = np.tile(np.arange(self.K), self.M)
        B[m_idx, self.perm.ravel(), cols] = 1.0
        return B

    @property
    def diagonals(self) -> np.ndarray:
        """(M, K) array with ``B_m[k, k]``."""
        return (self.perm == np.arange(self.K)).astype(float)

    def identity_index(self) -> int | None:
        hits = np.flatnonzero((self.perm == np.arange(self.K)).all(axis=1))
        return int(hits[0]) if hits.size else None

    @classmethod
    def from_matrices(cls, matrices) -> "PermutationBasis":
        B = np.asarray(matrices)
        if B.ndim != 3 or B.shape[1] != B.shape[2]:
            raise DimensionError(f"expected (M, K, K) stack, got {B.shape}")
        if not (np.isin(B, (0, 1)).all() and (B.sum(axis=1) == 1).all() and (B.sum(axis=2) == 1).all()):
            raise DimensionError("matrices are not permutation matrices")
        perm = B.argmax(axis=1).astype(np.int64)
        if len({p.tobytes() for p in perm}) != len(perm):
            raise DimensionError("basis contains duplicate permutations")
        first_is_identity = bool((perm[0] == np.arange(B.shape[1])).all())
        return cls(K=B.shape[1], M=B.shape[0], perm=perm, include_identity=first_is_identity)


def _max_permutations(K: int) -> float:
    return math.factorial(K) if K <= 20 else math.inf


def random_permutation_basis(K: int, M: int, seed: int, include_identity: bool = True) -> PermutationBasis:
    if K < 2:
        raise DimensionError(f"K must be >= 2, got {K}")
    if M < 1 or M > _max_permutations(K):
        raise InfeasibleBasisError(f"cannot draw M={M} distinct permutations of K={K} (K! = {math.factorial(min(K, 20))})")
    rng = np.random.default_rng(seed)
    rows: list[np.ndarray] = []
    seen: set[bytes] = set()
    if include_identity:
        ident = np.arange(K)
        rows.append(ident)
        seen.add(ident.tobytes())
    while len(rows) < M:
        p = rng.permutation(K)
        key = p.tobytes()
        if key in seen:
            continue
        seen.add(key)
        rows.append(p)
    perm = np.stack(rows).astype(np.int64)
    return PermutationBasis(K=K, M=M, perm=perm, seed=seed, include_identity=include_identity)


def reconstruct_confusion(coeffs, basis: PermutationBasis) -> np.ndarray:
    """Convex combination sum_m c_m B_m."""
    c = np.asarray(coeffs, dtype=float)
    if c.shape != (basis.M,):
        raise DimensionError(f"expected {basis.M} coefficients, got shape {c.shape}")
    return np.tensordot(c, basis.matrices, axes=1)


def stochasticity_class(matrix, tol: float = DEFAULT_TOL) -> Literal["not_stochastic", "singly", "doubly"]:
    P = np.asarray(matrix, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {P.shape}")
    in_range = np.all(P >= -tol) and np.all(P <= 1 + tol)
    if not in_range or not np.allclose(P.sum(axis=0), 1.0, rtol=0.0, atol=tol):
        return "not_stochastic"
    if np.allclose(P.sum(axis=1), 1.0, rtol=0.0, atol=tol):
        return "doubly"
    return "singly"
