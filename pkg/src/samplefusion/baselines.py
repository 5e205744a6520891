"""Comparison methods that share one weight vector or one confusion matrix per annotator.

These are compact versions built from the one-line descriptions of the cited
methods (soft majority voting, learned global weights, global confusion
matrices with a trace penalty, and an EM alternation), not ports of their
published code.  Every trainer goes through :func:`samplefusion.training.fit`
so backbone, optimizer, batching and checkpoint selection match the main method.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import ModelParams, predict_proba
from .fusion import WEIGHTS_ONLY, FusionGradients, batch_fusion_loss_grad
from .linalg import PermutationBasis, one_hot_rows, softmax, softmax_backward
from .training import Objective, SoftTargetObjective, TrainConfig, TrainResult, fit

MBEM_SMOOTHING = 1e-2
TRACE_INIT_DIAG = 0.8


def majority_vote_target(labels, K: int) -> np.ndarray:
    """Mean of one-hot annotator labels.  ``labels`` is (R,) for one sample or (R, N)."""
    labels = np.asarray(labels)
    return one_hot_rows(labels, K).mean(axis=0)


def train_majority_vote(params: ModelParams, X, labels, K: int, cfg: TrainConfig, X_val=None, y_val=None) -> TrainResult:
    return fit(params, X, SoftTargetObjective(majority_vote_target(labels, K)), cfg, X_val, y_val)


class GlobalWeightsObjective(Objective):
    """Weighted label fusion with one learned softmax weight vector shared by all samples."""

    frozen_heads = ("head_weights", "head_coeffs")

    def __init__(self, labels, K: int):
        super().__init__()
        self.labels = np.asarray(labels, dtype=np.int64)
        R = self.labels.shape[0]
        self.extra["w_logits"] = np.zeros(R)
        self._basis = PermutationBasis(K=K, M=1, perm=np.arange(K)[None], include_identity=True)

    @property
    def weights(self) -> np.ndarray:
        return softmax(self.extra["w_logits"])

    def batch(self, out, idx):
        B = len(idx)
        R = self.labels.shape[0]
        w_logits = np.broadcast_to(self.extra["w_logits"], (B, R))
        fwd, g = batch_fusion_loss_grad(out.f_logits, w_logits, np.zeros((B, R, 1)), self.labels[:, idx].T,
                                        self._basis, 0.0, mode=WEIGHTS_ONLY)
        return fwd.loss, FusionGradients(g.d_f_logits, None, None), {"w_logits": g.d_w_logits.sum(axis=0)}


def train_global_weights(params, X, labels, K, cfg, X_val=None, y_val=None):
    """Returns ``(TrainResult, weights)`` with the weight vector at the selected epoch."""
    obj = GlobalWeightsObjective(labels, K)
    res = fit(params, X, obj, cfg, X_val, y_val)
    return res, softmax(res.extra["w_logits"])


class TraceRegObjective(Objective):
    """Annotator label distribution P_r f(x) fit by cross-entropy, plus lambda_tr * sum_r tr(P_r).

    P_r[i, j] = Pr[annotator says i | true class j]; columns are softmaxes of
    free logits, initialised with diagonal TRACE_INIT_DIAG.
    """

    frozen_heads = ("head_weights", "head_coeffs")

    def __init__(self, labels, K: int, lambda_tr: float):
        super().__init__()
        self.labels = np.asarray(labels, dtype=np.int64)
        R = self.labels.shape[0]
        self.K = K
        self.lambda_tr = lambda_tr
        diag_logit = np.log(TRACE_INIT_DIAG * (K - 1) / (1.0 - TRACE_INIT_DIAG))
        self.extra["confusion_logits"] = np.tile(diag_logit * np.eye(K), (R, 1, 1))

    @property
    def confusions(self) -> np.ndarray:
        return softmax(self.extra["confusion_logits"], axis=1)

    def batch(self, out, idx):
        P = self.confusions  # (R, K, K)
        p = out.class_probs
        y = self.labels[:, idx].T  # (B, R)
        B, R = y.shape
        q = np.einsum("rij,bj->bri", P, p)
        q_y = np.maximum(np.take_along_axis(q, y[:, :, None], axis=2)[:, :, 0], 1e-12)
        trace = np.trace(P, axis1=1, axis2=2).sum()
        loss = float(-np.log(q_y).sum(axis=1).mean() + self.lambda_tr * trace)

        dq = np.zeros_like(q)
        np.put_along_axis(dq, y[:, :, None], (-1.0 / q_y / B)[:, :, None], axis=2)
        dP = np.einsum("bri,bj->rij", dq, p) + self.lambda_tr * np.eye(self.K)[None]
        dp = np.einsum("rij,bri->bj", P, dq)
        d_f = softmax_backward(p, dp)
        d_logits = softmax_backward(P, dP, axis=1)
        return loss, FusionGradients(d_f, None, None), {"confusion_logits": d_logits}


def train_global_confusion_tracereg(params, X, labels, K, cfg, lambda_tr=0.01, X_val=None, y_val=None):
    """Returns ``(TrainResult, confusions)`` with the (R, K, K) matrices at the selected epoch."""
    obj = TraceRegObjective(labels, K, lambda_tr)
    res = fit(params, X, obj, cfg, X_val, y_val)
    return res, softmax(res.extra["confusion_logits"], axis=1)


def mbem_estimate_confusions(posterior, labels, K: int, smoothing: float = MBEM_SMOOTHING) -> np.ndarray:
    """(R, K, K) with P[r, i, j] proportional to sum_n q_n(j) [y_rn = i] + smoothing, columns normalised."""
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.einsum("rni,nj->rij", one_hot_rows(labels, K), np.asarray(posterior, dtype=float)) + smoothing
    return counts / counts.sum(axis=1, keepdims=True)


def mbem_posterior(prior, labels, confusions) -> np.ndarray:
    """q_n(j) proportional to prior_n(j) * prod_r P_r[y_rn, j], computed in log space."""
    labels = np.asarray(labels, dtype=np.int64)
    R = labels.shape[0]
    log_lik = np.log(np.maximum(prior, 1e-300))
    for r in range(R):
        log_lik = log_lik + np.log(confusions[r][labels[r]])
    return softmax(log_lik, axis=1)


def train_mbem(params, X, labels, K, cfg, T_em=3, smoothing=MBEM_SMOOTHING, X_val=None, y_val=None):
    """EM alternation started from the soft majority vote.

    Round 0 fits the classifier on the majority vote and estimates confusions
    from it.  Round t > 0: (M1) confusions re-estimated from the classifier's
    hard predictions, (E) posterior from the classifier output as prior times
    the annotator likelihoods, (M2) ``cfg.epochs`` more epochs on the posterior.
    The classifier is warm-started across rounds; checkpoint selection runs
    over the concatenated epochs.

    Returns ``(TrainResult, confusions, posterior)``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    q = majority_vote_target(labels, K)
    P = mbem_estimate_confusions(q, labels, K, smoothing)
    result = None
    for t in range(T_em):
        if t > 0:
            prior = predict_proba(params, X)
            P = mbem_estimate_confusions(one_hot_rows(prior.argmax(axis=1), K), labels, K, smoothing)
            q = mbem_posterior(prior, labels, P)
        round_cfg = TrainConfig(cfg.lr, cfg.momentum, cfg.batch_size, cfg.epochs, cfg.seed + t)
        res = fit(params, X, SoftTargetObjective(q), round_cfg, X_val, y_val)
        res.extra = {"confusions": P.copy()}
        result = res if result is None else result.merge(res)
    return result, result.extra["confusions"], q
