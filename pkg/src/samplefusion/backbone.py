"""Dense ReLU trunk with three softmax heads, manual backprop and momentum SGD."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError, NumericError
from .fusion import FusionGradients
from .linalg import softmax

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Dims:
    input_dim: int
    hidden: tuple[int, ...]
    K: int
    R: int
    M: int

    def __post_init__(self):
        sizes = (self.input_dim, *self.hidden, self.K, self.R, self.M)
        if any(int(s) < 1 for s in sizes):
            raise DimensionError(f"all dimensions must be positive, got {self}")


@dataclass
class ModelParams:
    dims: Dims
    trunk: list[tuple[np.ndarray, np.ndarray]]
    head_class: tuple[np.ndarray, np.ndarray]
    head_weights: tuple[np.ndarray, np.ndarray]
    head_coeffs: tuple[np.ndarray, np.ndarray]

    def tensors(self) -> dict[str, np.ndarray]:
        """Flat, ordered name -> array view (shared memory with the params)."""
        out = {}
        for i, (W, b) in enumerate(self.trunk):
            out[f"trunk.{i}.W"], out[f"trunk.{i}.b"] = W, b
        for name in ("head_class", "head_weights", "head_coeffs"):
            W, b = getattr(self, name)
            out[f"{name}.W"], out[f"{name}.b"] = W, b
        return out

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)


@dataclass
class HeadOutputs:
    class_probs: np.ndarray  # (B, K)
    weights: np.ndarray  # (B, R)
    coeffs: np.ndarray  # (B, R, M)
    f_logits: np.ndarray
    w_logits: np.ndarray
    c_logits: np.ndarray  # (B, R, M)
    activations: list[np.ndarray] = field(repr=False)  # input then each hidden output


def _uniform(rng, fan_in, fan_out, limit):
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(dims: Dims, seed: int, include_identity: bool = True, identity_bias: float = 1.0) -> ModelParams:
    """He-uniform trunk, 1/sqrt(fan_in) heads, zero biases.

    With ``include_identity`` the coefficient of basis element 0 (the identity)
    gets ``identity_bias`` added to its logit for every annotator.
    """
    rng = np.random.default_rng(seed)
    trunk = []
    width = dims.input_dim
    for h in dims.hidden:
        trunk.append((_uniform(rng, width, h, np.sqrt(6.0 / width)), np.zeros(h)))
        width = h

    def head(n_out):
        return _uniform(rng, width, n_out, 1.0 / np.sqrt(width)), np.zeros(n_out)

    head_class = head(dims.K)
    head_weights = head(dims.R)
    head_coeffs = head(dims.R * dims.M)
    if include_identity:
        head_coeffs[1].reshape(dims.R, dims.M)[:, 0] += identity_bias
    return ModelParams(dims, trunk, head_class, head_weights, head_coeffs)


def forward(params: ModelParams, x) -> HeadOutputs:
    """Batched forward pass; ``x`` is (B, D) or a single (D,) vector treated as B=1."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None]
    if x.shape[1] != params.dims.input_dim:
        raise DimensionError(f"input has {x.shape[1]} features, model expects {params.dims.input_dim}")
    acts = [x]
    h = x
    for W, b in params.trunk:
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite trunk activation")
    d = params.dims
    f_logits = h @ params.head_class[0] + params.head_class[1]
    w_logits = h @ params.head_weights[0] + params.head_weights[1]
    c_logits = (h @ params.head_coeffs[0] + params.head_coeffs[1]).reshape(-1, d.R, d.M)
    return HeadOutputs(
        class_probs=softmax(f_logits),
        weights=softmax(w_logits),
        coeffs=softmax(c_logits),
        f_logits=f_logits,
        w_logits=w_logits,
        c_logits=c_logits,
        activations=acts,
    )


def predict_proba(params: ModelParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None]
    h = x
    for W, b in params.trunk:
        h = np.maximum(h @ W + b, 0.0)
    return softmax(h @ params.head_class[0] + params.head_class[1])


def predict_class(params: ModelParams, x) -> np.ndarray:
    """Argmax of the class head; ``np.argmax`` already breaks ties toward the smallest index."""
    return np.argmax(predict_proba(params, x), axis=1)


def backward(params: ModelParams, cache: HeadOutputs, grads: FusionGradients) -> dict[str, np.ndarray]:
    """Gradients of the scalar loss w.r.t. every tensor in ``params.tensors()``.

    ``grads`` holds upstream gradients w.r.t. the head logits; any block may be
    None, meaning that head does not touch the loss (its parameter gradient is zero).
    """
    d = params.dims
    if len(cache.activations) != len(params.trunk) + 1:
        raise DimensionError("cache was produced by a model with a different trunk depth")
    h = cache.activations[-1]
    B = h.shape[0]
    if h.shape[1] != params.head_class[0].shape[0]:
        raise DimensionError("cache does not match params")
    blocks = {
        "head_class": grads.d_f_logits,
        "head_weights": grads.d_w_logits,
        "head_coeffs": None if grads.d_c_logits is None else np.reshape(grads.d_c_logits, (B, d.R * d.M)),
    }
    out = {}
    dh = np.zeros_like(h)
    for name, g in blocks.items():
        W, b = getattr(params, name)
        if g is None:
            out[f"{name}.W"], out[f"{name}.b"] = np.zeros_like(W), np.zeros_like(b)
            continue
        out[f"{name}.W"] = h.T @ g
        out[f"{name}.b"] = g.sum(axis=0)
        dh += g @ W.T
    for i in range(len(params.trunk) - 1, -1, -1):
        W, _ = params.trunk[i]
        dz = dh * (cache.activations[i + 1] > 0)
        out[f"trunk.{i}.W"] = cache.activations[i].T @ dz
        out[f"trunk.{i}.b"] = dz.sum(axis=0)
        dh = dz @ W.T
    names = list(params.tensors())
    return {k: out[k] for k in names}


@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float = 0.9
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


def sgd_momentum_step(tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState) -> None:
    """Classical momentum, in place: v <- mu v + g;  p <- p - lr v."""
    for name, p in tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(p)
        v *= state.momentum
        v += g
        p -= state.learning_rate * v


def save_checkpoint(params: ModelParams, path) -> None:
    d = params.dims
    arrays = {f"param/{k}": v for k, v in params.tensors().items()}
    np.savez(
        path,
        format_version=np.array(CHECKPOINT_VERSION),
        dims=np.array([d.input_dim, d.K, d.R, d.M], dtype=np.int64),
        hidden=np.array(d.hidden, dtype=np.int64),
        **arrays,
    )


def load_checkpoint(path) -> ModelParams:
    with np.load(path) as z:
        version = int(z["format_version"])
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"checkpoint format version {version}, expected {CHECKPOINT_VERSION}")
        input_dim, K, R, M = (int(v) for v in z["dims"])
        dims = Dims(input_dim, tuple(int(h) for h in z["hidden"]), K, R, M)
        t = {k[len("param/"):]: z[k].copy() for k in z.files if k.startswith("param/")}
    trunk = [(t[f"trunk.{i}.W"], t[f"trunk.{i}.b"]) for i in range(len(dims.hidden))]
    return ModelParams(
        dims,
        trunk,
        (t["head_class.W"], t["head_class.b"]),
        (t["head_weights.W"], t["head_weights.b"]),
        (t["head_coeffs.W"], t["head_coeffs.b"]),
    )
