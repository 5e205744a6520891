"""Sample-wise label fusion: clean labels, fused targets and the regularised loss.

Confusion matrices here map an annotator's given label to a distribution over
the de-biased label (column ``j`` = distribution given annotator label ``j``).
They are never materialised during training: with ``P = sum_m c_m B_m`` the
column for label ``y`` is ``sum_m c_m e_{perm[m, y]}`` and the diagonal is
``sum_m c_m diag(B_m)``, which is all the loss needs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidLabelError, NumericError
from .linalg import PermutationBasis, log_softmax, one_hot_rows, softmax, softmax_backward

PROB_FLOOR = 1e-12

# Training modes: which of the two sample-wise quantities is learned.
FULL = "full"
WEIGHTS_ONLY = "weights_only"
CONFUSION_ONLY = "confusion_only"
MODES = (FULL, WEIGHTS_ONLY, CONFUSION_ONLY)


def clean_label(P, y: int) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionError(f"confusion matrix must be square, got {P.shape}")
    if not 0 <= y < P.shape[1]:
        raise InvalidLabelError(f"label {y} out of range for K={P.shape[1]}")
    return P[:, y].copy()


def fuse_target(cleans, w) -> np.ndarray:
    cleans = np.asarray(cleans, dtype=float)
    w = np.asarray(w, dtype=float)
    if cleans.ndim != 2 or w.shape != (cleans.shape[0],):
        raise DimensionError(f"{cleans.shape[0] if cleans.ndim == 2 else '?'} clean labels vs weight shape {w.shape}")
    return w @ cleans


def diag_penalty(P) -> float:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionError(f"confusion matrix must be square, got {P.shape}")
    return float(np.sum((1.0 - np.diag(P)) ** 2))


def kl_divergence(target, pred) -> float:
    """KL(target || pred) with 0 ln 0 = 0 and ``pred`` floored at PROB_FLOOR."""
    t = np.asarray(target, dtype=float)
    p = np.asarray(pred, dtype=float)
    if t.shape != p.shape:
        raise DimensionError(f"shape mismatch {t.shape} vs {p.shape}")
    safe_t = np.maximum(t, PROB_FLOOR)
    terms = np.where(t > 0, t * (np.log(safe_t) - np.log(np.maximum(p, PROB_FLOOR))), 0.0)
    out = float(terms.sum())
    if not np.isfinite(out):
        raise NumericError("KL divergence is not finite")
    return out


@dataclass
class FusionInputs:
    """Per-sample head logits plus the R annotator labels."""

    f_logits: np.ndarray  # (K,)
    w_logits: np.ndarray  # (R,)
    c_logits: np.ndarray  # (R, M)
    annotator_labels: np.ndarray  # (R,) ints

    def __post_init__(self):
        self.f_logits = np.asarray(self.f_logits, dtype=float)
        self.w_logits = np.asarray(self.w_logits, dtype=float)
        self.c_logits = np.asarray(self.c_logits, dtype=float)
        self.annotator_labels = np.asarray(self.annotator_labels, dtype=np.int64)
        R = self.w_logits.shape[0]
        if self.c_logits.ndim != 2 or self.c_logits.shape[0] != R or self.annotator_labels.shape != (R,):
            raise DimensionError("inconsistent annotator axis across w_logits, c_logits and labels")


@dataclass
class FusionGradients:
    d_f_logits: np.ndarray
    d_w_logits: np.ndarray
    d_c_logits: np.ndarray


@dataclass
class BatchFusion:
    """Forward quantities of a batch, kept for inspection and tests."""

    loss: float
    kl: np.ndarray  # (B,)
    penalty: np.ndarray  # (B,)
    target: np.ndarray  # (B, K)
    cleans: np.ndarray  # (B, R, K)
    weights: np.ndarray  # (B, R)
    coeffs: np.ndarray  # (B, R, M)


def _check_batch(f_logits, w_logits, c_logits, labels, basis):
    B, K = f_logits.shape
    if K != basis.K:
        raise DimensionError(f"f_logits has K={K}, basis has K={basis.K}")
    if w_logits.ndim != 2 or w_logits.shape[0] != B:
        raise DimensionError(f"w_logits shape {w_logits.shape} does not match batch {B}")
    R = w_logits.shape[1]
    if c_logits.shape != (B, R, basis.M):
        raise DimensionError(f"c_logits shape {c_logits.shape}, expected {(B, R, basis.M)}")
    if labels.shape != (B, R):
        raise DimensionError(f"labels shape {labels.shape}, expected {(B, R)}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise InvalidLabelError(f"annotator labels out of range for K={K}")


def batch_fusion_loss_grad(f_logits, w_logits, c_logits, labels, basis: PermutationBasis, lam: float,
                           mode: str = FULL, need_grad: bool = True):
    """Mean regularised fusion loss over a batch and its gradients w.r.t. all logits.

    Shapes: f_logits (B, K), w_logits (B, R), c_logits (B, R, M), labels (B, R).
    In ``weights_only`` mode every confusion matrix is the identity basis element
    and the coefficient gradient is exactly zero; in ``confusion_only`` mode the
    weights are uniform and their gradient is exactly zero.

    Returns ``(BatchFusion, FusionGradients | None)``; gradients are of the batch mean.
    """
    f_logits = np.asarray(f_logits, dtype=float)
    w_logits = np.asarray(w_logits, dtype=float)
    c_logits = np.asarray(c_logits, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    _check_batch(f_logits, w_logits, c_logits, labels, basis)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    B, K = f_logits.shape
    R, M = c_logits.shape[1], c_logits.shape[2]

    if mode == WEIGHTS_ONLY:
        ident = basis.identity_index()
        if ident is None:
            raise DimensionError("weights_only mode needs the identity in the basis")
        c = np.zeros((B, R, M))
        c[:, :, ident] = 1.0
    else:
        c = softmax(c_logits, axis=-1)
    w = np.full((B, R), 1.0 / R) if mode == CONFUSION_ONLY else softmax(w_logits, axis=-1)

    # routes[b, r, m, k] = 1 iff B_m sends annotator label y_{b,r} to class k
    routes = one_hot_rows(basis.perm.T[labels], K)  # (B, R, M, K)
    cleans = np.einsum("brm,brmk->brk", c, routes)
    target = np.einsum("br,brk->bk", w, cleans)

    logp = log_softmax(f_logits)
    pos = target > 0
    log_t = np.log(np.maximum(target, PROB_FLOOR))
    kl = np.where(pos, target * (log_t - logp), 0.0).sum(axis=1)

    diag = c @ basis.diagonals  # (B, R, K)
    gap = 1.0 - diag
    penalty = (lam / R) * (gap ** 2).sum(axis=(1, 2))
    per_sample = kl + penalty
    loss = float(per_sample.mean())
    if not np.isfinite(loss):
        raise NumericError("fusion loss is not finite")
    fwd = BatchFusion(loss=loss, kl=kl, penalty=penalty, target=target, cleans=cleans, weights=w, coeffs=c)
    if not need_grad:
        return fwd, None

    scale = 1.0 / B
    p = np.exp(logp)
    d_f = (p * target.sum(axis=1, keepdims=True) - target) * scale
    g_target = np.where(target > PROB_FLOOR, log_t + 1.0, np.log(PROB_FLOOR)) - logp
    g_target *= scale

    if mode == CONFUSION_ONLY:
        d_w = np.zeros_like(w_logits)
    else:
        g_w = np.einsum("bk,brk->br", g_target, cleans)
        d_w = softmax_backward(w, g_w)

    if mode == WEIGHTS_ONLY:
        d_c = np.zeros_like(c_logits)
    else:
        g_clean = w[:, :, None] * g_target[:, None, :]  # (B, R, K)
        g_c = np.einsum("brk,brmk->brm", g_clean, routes)
        g_c += (-2.0 * lam / R * scale) * (gap @ basis.diagonals.T)
        d_c = softmax_backward(c, g_c)
    return fwd, FusionGradients(d_f_logits=d_f, d_w_logits=d_w, d_c_logits=d_c)


def _as_batch(inputs: FusionInputs):
    return (inputs.f_logits[None], inputs.w_logits[None], inputs.c_logits[None], inputs.annotator_labels[None])


def fusion_loss(inputs: FusionInputs, basis: PermutationBasis, lam: float, mode: str = FULL) -> float:
    fwd, _ = batch_fusion_loss_grad(*_as_batch(inputs), basis, lam, mode=mode, need_grad=False)
    return fwd.loss


def fusion_loss_grad(inputs: FusionInputs, basis: PermutationBasis, lam: float, mode: str = FULL):
    fwd, g = batch_fusion_loss_grad(*_as_batch(inputs), basis, lam, mode=mode)
    return fwd.loss, FusionGradients(g.d_f_logits[0], g.d_w_logits[0], g.d_c_logits[0])
