"""One training loop for every method; methods differ only in their objective."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import HeadOutputs, ModelParams, OptimizerState, backward, forward, predict_class, sgd_momentum_step
from .errors import DivergenceError, NumericError
from .fusion import CONFUSION_ONLY, FULL, WEIGHTS_ONLY, FusionGradients, PROB_FLOOR, batch_fusion_loss_grad
from .linalg import PermutationBasis, log_softmax


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0


def accuracy(predictions, golden) -> float:
    predictions = np.asarray(predictions)
    golden = np.asarray(golden)
    if predictions.shape != golden.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {golden.shape}")
    if predictions.size == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    return float(np.mean(predictions == golden))


class Objective:
    """Turns head outputs on a batch into a loss and upstream gradients.

    ``extra`` holds trainable parameters that live outside the network (global
    weights, global confusion logits); ``frozen_heads`` lists heads whose
    parameter gradients must come out exactly zero.
    """

    extra: dict[str, np.ndarray]
    frozen_heads: tuple[str, ...] = ()

    def __init__(self):
        self.extra = {}

    def batch(self, out: HeadOutputs, idx: np.ndarray):
        raise NotImplementedError


def soft_target_loss_grad(f_logits, targets):
    """Mean KL(target || softmax(f)) and its gradient w.r.t. f_logits."""
    logp = log_softmax(f_logits)
    pos = targets > 0
    log_t = np.log(np.maximum(targets, PROB_FLOOR))
    loss = float(np.where(pos, targets * (log_t - logp), 0.0).sum(axis=1).mean())
    d_f = (np.exp(logp) * targets.sum(axis=1, keepdims=True) - targets) / len(targets)
    return loss, d_f


class SoftTargetObjective(Objective):
    """Fixed per-sample target distributions; only the class head is trained."""

    frozen_heads = ("head_weights", "head_coeffs")

    def __init__(self, targets):
        super().__init__()
        self.targets = np.asarray(targets, dtype=float)

    def batch(self, out, idx):
        loss, d_f = soft_target_loss_grad(out.f_logits, self.targets[idx])
        return loss, FusionGradients(d_f, None, None), {}


class FusionObjective(Objective):
    """Sample-wise weights and confusion matrices (the full method and its ablations)."""

    def __init__(self, labels, basis: PermutationBasis, lam: float, mode: str = FULL):
        super().__init__()
        self.labels = np.asarray(labels, dtype=np.int64)  # (R, N)
        self.basis = basis
        self.lam = lam
        self.mode = mode
        self.frozen_heads = {WEIGHTS_ONLY: ("head_coeffs",), CONFUSION_ONLY: ("head_weights",)}.get(mode, ())

    def batch(self, out, idx):
        fwd, g = batch_fusion_loss_grad(out.f_logits, out.w_logits, out.c_logits, self.labels[:, idx].T,
                                        self.basis, self.lam, mode=self.mode)
        return fwd.loss, g, {}


@dataclass
class TrainResult:
    params: ModelParams
    extra: dict[str, np.ndarray]
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    selected_epoch: int = 0  # 1-based

    def merge(self, later: "TrainResult") -> "TrainResult":
        """Concatenate histories of consecutive training stages, keeping the better checkpoint."""
        offset = len(self.train_loss)
        hist_val = self.val_accuracy + later.val_accuracy
        keep_later = _best_epoch(hist_val) > offset
        return TrainResult(
            params=later.params if keep_later else self.params,
            extra=later.extra if keep_later else self.extra,
            train_loss=self.train_loss + later.train_loss,
            val_accuracy=hist_val,
            selected_epoch=_best_epoch(hist_val),
        )


def _best_epoch(val_accuracy) -> int:
    """1-based argmax with ties to the earliest epoch; last epoch when there is no validation."""
    vals = np.asarray(val_accuracy, dtype=float)
    if vals.size == 0:
        return 0
    if np.all(np.isnan(vals)):
        return int(vals.size)
    return int(np.nanargmax(vals)) + 1


def fit(params: ModelParams, X, objective: Objective, cfg: TrainConfig, X_val=None, y_val=None) -> TrainResult:
    """Mini-batch momentum SGD; returns the checkpoint with the best validation accuracy.

    ``params`` and ``objective.extra`` are updated in place; the returned result
    holds copies taken at the selected epoch.
    """
    X = np.asarray(X, dtype=float)
    N = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    state = OptimizerState(cfg.lr, cfg.momentum)
    have_val = X_val is not None and len(X_val) > 0
    best = TrainResult(params.copy(), {k: v.copy() for k, v in objective.extra.items()})
    best_val = -np.inf
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(N)
        total = 0.0
        for b, start in enumerate(range(0, N, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                out = forward(params, X[idx])
                loss, head_grads, extra_grads = objective.batch(out, idx)
            except NumericError as exc:
                raise DivergenceError(epoch, b, str(exc)) from exc
            if not np.isfinite(loss):
                raise DivergenceError(epoch, b, loss)
            grads = backward(params, out, head_grads)
            for head in objective.frozen_heads:
                if np.any(grads[f"{head}.W"]) or np.any(grads[f"{head}.b"]):
                    raise AssertionError(f"frozen head {head} received a non-zero gradient")
            tensors = params.tensors()
            for name, v in objective.extra.items():
                tensors[f"extra.{name}"] = v
                grads[f"extra.{name}"] = extra_grads[name]
            sgd_momentum_step(tensors, grads, state)
            total += loss * len(idx)
        best.train_loss.append(total / N)
        val = accuracy(predict_class(params, X_val), y_val) if have_val else float("nan")
        best.val_accuracy.append(val)
        # without validation data the latest epoch is always the selected one
        if not have_val or val > best_val:
            best_val = val
            best.params = params.copy()
            best.extra = {k: v.copy() for k, v in objective.extra.items()}
            best.selected_epoch = epoch
    return best
