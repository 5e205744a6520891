"""Config-driven experiments: build data, synthesise annotators, train, select, evaluate."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import annotators as ann
from . import baselines
from .backbone import Dims, ModelParams, forward, init_params, predict_class, save_checkpoint
from .data import Dataset, generate_two_moon, load_mnist_idx, split, standardize, two_moon_annotator_labels
from .errors import ConfigError, DimensionError, SampleFusionError
from .fusion import CONFUSION_ONLY, FULL, MODES, WEIGHTS_ONLY
from .linalg import PermutationBasis, one_hot_rows, random_permutation_basis
from .training import FusionObjective, SoftTargetObjective, TrainConfig, TrainResult, accuracy, fit

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1

METHODS = ("ours", "mjv", "wdn", "tracereg", "mbem", "golden")
SYNTHESES = ("native", "euclidean", "hammer_spammer", "external")

_DATASET_DEFAULTS = {
    "twomoon": dict(K=2, R=2, M=2, split=(16000, 0, 4000), hidden=(32, 32), lr=0.05, epochs=30,
                    synthesis="native"),
    "mnist": dict(K=10, R=3, M=20, split=(7000, 1000, 2000), hidden=(256, 128), lr=0.01, epochs=20,
                  synthesis="euclidean"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one run.  ``None`` fields take per-dataset defaults."""

    dataset: str = "twomoon"
    # twomoon
    n: int = 20000
    noise_sigma: float = 0.1
    y_threshold: float = 0.0
    # mnist: a pool file split three ways, or a pool for train/val plus a separate test file
    mnist_images: str | None = "data/mnist/mnist10k-images-idx3-ubyte.gz"
    mnist_labels: str | None = "data/mnist/mnist10k-labels-idx1-ubyte.gz"
    mnist_test_images: str | None = None
    mnist_test_labels: str | None = None
    split: tuple[int, int, int] | None = None
    # annotators
    synthesis: str | None = None
    epsilon: float | None = None
    corruption_target: float | None = None
    calibrate_per_annotator: bool = True
    standardize_distances: bool = True
    n_correct: int = 3
    labels_path: str | None = None
    # method
    method: str = "ours"
    mode: str = FULL
    K: int | None = None
    R: int | None = None
    M: int | None = None
    lam: float = 1.0
    include_identity: bool = True
    hidden: tuple[int, ...] | None = None
    lr: float | None = None
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int | None = None
    T_em: int = 3
    lambda_tr: float = 0.01
    data_seed: int = 0
    model_seed: int = 0
    synth_seed: int = 0
    output_dir: str | None = None

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("split", "hidden"):
            if d.get(key) is not None:
                d[key] = tuple(int(v) for v in d[key])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        for key in ("split", "hidden"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def resolved(self) -> "ExperimentConfig":
        """Fill dataset defaults and validate."""
        if self.dataset not in _DATASET_DEFAULTS:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        defaults = _DATASET_DEFAULTS[self.dataset]
        filled = {k: (getattr(self, k) if getattr(self, k) is not None else v) for k, v in defaults.items()}
        if self.synthesis == "native" and self.dataset != "twomoon":
            raise ConfigError("native annotators exist only for twomoon")
        cfg = dataclasses.replace(self, **filled)
        cfg._validate()
        return cfg

    def _validate(self):
        if self.synthesis not in SYNTHESES:
            raise ConfigError(f"unknown synthesis {self.synthesis!r}")
        if self.dataset == "twomoon" and self.K != 2:
            raise ConfigError("twomoon is binary: K must be 2")
        if self.synthesis == "native" and self.R != 2:
            raise ConfigError("twomoon's native annotators are exactly two (R=2)")
        if self.method not in METHODS and not self.method.startswith("single:"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.method.startswith("single:"):
            try:
                r = int(self.method.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad single-annotator method {self.method!r}") from None
            if not 1 <= r <= self.R:
                raise ConfigError(f"{self.method}: annotator index must be in 1..{self.R}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode != FULL and self.method != "ours":
            raise ConfigError(f"mode {self.mode!r} applies only to method 'ours'")
        if self.mode == WEIGHTS_ONLY and not self.include_identity:
            raise ConfigError("weights_only mode needs include_identity (confusions frozen at I)")
        if self.method == "ours" and self.M < 1:
            raise ConfigError("method 'ours' needs M >= 1")
        if self.synthesis == "euclidean" and (self.epsilon is None) == (self.corruption_target is None):
            raise ConfigError("euclidean synthesis needs exactly one of epsilon / corruption_target")
        if self.synthesis == "external" and not self.labels_path:
            raise ConfigError("external synthesis needs labels_path")
        positive = dict(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs, K=self.K, R=self.R,
                        T_em=self.T_em)
        bad = [k for k, v in positive.items() if not v > 0]
        if bad:
            raise ConfigError(f"must be positive: {bad}")
        if self.lam < 0 or self.lambda_tr < 0:
            raise ConfigError("regularisation weights must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden sizes must be positive")


@dataclass
class TrainedModel:
    params: ModelParams
    basis: PermutationBasis
    mode: str = FULL
    input_stats: tuple[np.ndarray, np.ndarray] | None = None

    def heads(self, X):
        """(class_probs, weights, coeffs) with the mode's frozen quantities substituted."""
        X = np.asarray(X, dtype=float)
        if self.input_stats is not None:
            X = (X - self.input_stats[0]) / self.input_stats[1]
        out = forward(self.params, X)
        w, c = out.weights, out.coeffs
        if self.mode == CONFUSION_ONLY:
            w = np.full_like(w, 1.0 / w.shape[1])
        if self.mode == WEIGHTS_ONLY:
            c = np.zeros_like(c)
            c[:, :, self.basis.identity_index()] = 1.0
        return out.class_probs, w, c


@dataclass
class ExperimentReport:
    method: str
    train_loss: list[float]
    val_accuracy: list[float]
    selected_epoch: int
    test_accuracy: float
    corruption_rates: list[float]
    epsilon_used: float | list[float] | None
    config: dict[str, Any]
    wall_clock_s: float
    schema_version: int = REPORT_SCHEMA_VERSION
    extra: dict[str, Any] = field(default_factory=dict)
    model: TrainedModel | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "model"}
        return json.loads(json.dumps(d, default=_jsonable))

    def numbers(self) -> dict[str, Any]:
        """Everything except wall-clock time: what determinism checks compare."""
        d = self.to_dict()
        d.pop("wall_clock_s")
        return d


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serialisable: {type(o)}")


def _data_path(p) -> Path:
    """Relative paths resolve against the working directory, then the repository root."""
    if p is None:
        raise ConfigError("missing data file path")
    path = Path(p)
    if not path.is_absolute() and not path.exists():
        alt = Path(__file__).resolve().parents[2] / path
        if alt.exists():
            return alt
    return path


@dataclass
class PreparedData:
    train: Dataset
    val: Dataset
    test: Dataset
    epsilon_used: float | list[float] | None


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    """Dataset, split and annotator labels for the training split (one object shared by all methods)."""
    cfg = cfg.resolved()
    if cfg.dataset == "twomoon":
        full = generate_two_moon(cfg.n, cfg.noise_sigma, cfg.data_seed, cfg.y_threshold)
        if cfg.synthesis != "native":
            full.annotators = None
        external_test = None
    else:
        full = load_mnist_idx(_data_path(cfg.mnist_images), _data_path(cfg.mnist_labels))
        external_test = None
        if cfg.mnist_test_images:
            external_test = load_mnist_idx(_data_path(cfg.mnist_test_images), _data_path(cfg.mnist_test_labels))
    if cfg.synthesis == "external":
        full.annotators = ann.load_external_labels(cfg.labels_path, full.N, cfg.R, cfg.K)
    sizes = cfg.split if external_test is None else (cfg.split[0], cfg.split[1], 0)
    train, val, test = split(full, sizes, cfg.data_seed)
    if external_test is not None:
        test = external_test
        test.split_tag = "test"

    epsilon_used = None
    if cfg.synthesis == "euclidean":
        feats = standardize(train)[0].features if cfg.standardize_distances else train.features
        epsilon_used = cfg.epsilon
        if cfg.corruption_target is not None:
            epsilon_used = ann.calibrate_epsilon(feats, cfg.R, cfg.synth_seed, cfg.corruption_target,
                                                 per_annotator=cfg.calibrate_per_annotator)
            if cfg.calibrate_per_annotator:
                epsilon_used = epsilon_used.tolist()
        train.annotators = ann.synthesize_euclidean(feats, train.golden, cfg.R, epsilon_used, cfg.synth_seed, K=cfg.K)
    elif cfg.synthesis == "hammer_spammer":
        train.annotators = ann.synthesize_hammer_spammer(train.golden, cfg.R, cfg.n_correct, cfg.K, cfg.synth_seed)
    if train.annotators is None or train.annotators.R != cfg.R:
        raise ConfigError(f"expected {cfg.R} annotators on the training split")
    return PreparedData(train, val, test, epsilon_used)


def train_method(cfg: ExperimentConfig, data: PreparedData) -> tuple[TrainResult, TrainedModel, dict]:
    cfg = cfg.resolved()
    train, val = data.train, data.val
    X, labels = train.features, train.annotators.labels
    dims = Dims(X.shape[1], tuple(cfg.hidden), cfg.K, cfg.R, cfg.M)
    params = init_params(dims, cfg.model_seed, include_identity=cfg.include_identity)
    tcfg = TrainConfig(cfg.lr, cfg.momentum, cfg.batch_size, cfg.epochs, cfg.model_seed)
    vX, vy = (val.features, val.golden) if val.N else (None, None)
    extra: dict[str, Any] = {}
    # the basis seed is tied to the model seed: both are "model" randomness
    basis = random_permutation_basis(cfg.K, cfg.M, cfg.model_seed, cfg.include_identity)
    if cfg.method == "ours":
        res = fit(params, X, FusionObjective(labels, basis, cfg.lam, cfg.mode), tcfg, vX, vy)
    elif cfg.method == "golden":
        res = fit(params, X, SoftTargetObjective(one_hot_rows(train.golden, cfg.K)), tcfg, vX, vy)
    elif cfg.method.startswith("single:"):
        r = int(cfg.method.split(":")[1]) - 1
        res = fit(params, X, SoftTargetObjective(one_hot_rows(labels[r], cfg.K)), tcfg, vX, vy)
    elif cfg.method == "mjv":
        res = baselines.train_majority_vote(params, X, labels, cfg.K, tcfg, vX, vy)
    elif cfg.method == "wdn":
        res, w = baselines.train_global_weights(params, X, labels, cfg.K, tcfg, vX, vy)
        extra["global_weights"] = w
    elif cfg.method == "tracereg":
        res, P = baselines.train_global_confusion_tracereg(params, X, labels, cfg.K, tcfg, cfg.lambda_tr, vX, vy)
        extra["global_confusions"] = P
    elif cfg.method == "mbem":
        res, P, _ = baselines.train_mbem(params, X, labels, cfg.K, tcfg, cfg.T_em, X_val=vX, y_val=vy)
        extra["global_confusions"] = P
    else:  # pragma: no cover - guarded by validation
        raise ConfigError(cfg.method)
    model = TrainedModel(res.params, basis, cfg.mode if cfg.method == "ours" else FULL)
    return res, model, extra


def run_experiment(cfg: ExperimentConfig, data: PreparedData | None = None) -> ExperimentReport:
    """Train one method and evaluate its validation-selected checkpoint on the test split.

    ``data`` lets several methods share one prepared dataset; it must come from
    :func:`prepare_data` on a config with the same data/synthesis fields.
    """
    t0 = time.perf_counter()
    cfg = cfg.resolved()
    if data is None:
        data = prepare_data(cfg)
    res, model, extra = train_method(cfg, data)
    test_acc = accuracy(predict_class(res.params, data.test.features), data.test.golden)
    report = ExperimentReport(
        method=cfg.method if cfg.mode == FULL else f"{cfg.method}[{cfg.mode}]",
        train_loss=res.train_loss,
        val_accuracy=res.val_accuracy,
        selected_epoch=res.selected_epoch,
        test_accuracy=test_acc,
        corruption_rates=ann.corruption_rate(data.train.annotators, data.train.golden).tolist(),
        epsilon_used=data.epsilon_used,
        config=cfg.to_dict(),
        wall_clock_s=time.perf_counter() - t0,
        extra=extra,
        model=model,
    )
    if cfg.output_dir:
        write_report(report, cfg.output_dir)
    log.info("%s: test accuracy %.4f (epoch %d)", report.method, test_acc, res.selected_epoch)
    return report


def write_report(report: ExperimentReport, out_dir) -> None:
    """``report.json`` (flat keys + schema_version), ``curves.csv`` and ``model.npz``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
    with open(out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_accuracy"])
        for i, (l, v) in enumerate(zip(report.train_loss, report.val_accuracy), start=1):
            w.writerow([i, repr(l), repr(v)])
    if report.model is not None:
        save_checkpoint(report.model.params, out / "model.npz")


def _parse_quantity(quantity: str, R: int):
    if quantity == "prediction":
        return "prediction", None
    for kind in ("weight", "confusion_diag"):
        if quantity.startswith(kind + "[") and quantity.endswith("]"):
            r = int(quantity[len(kind) + 1:-1])
            if not 1 <= r <= R:
                raise ValueError(f"{quantity}: annotator index must be in 1..{R}")
            return kind, r - 1
    raise ValueError(f"unknown heatmap quantity {quantity!r}")


def export_heatmap_grid(model: TrainedModel, grid, quantity: str, path=None, label_fn=two_moon_annotator_labels):
    """Evaluate a 2-D model on a regular grid; returns an (res*res, 3) array of x, y, value.

    ``confusion_diag[r]`` reports P_r[y, y] where y is annotator r's label at the
    grid point, i.e. the probability the model assigns to that label being right.
    """
    (x0, x1), (y0, y1), res = grid
    if model.params.dims.input_dim != 2:
        raise DimensionError("heatmaps need a model with 2-D inputs")
    kind, r = _parse_quantity(quantity, model.params.dims.R)
    xs, ys = np.meshgrid(np.linspace(x0, x1, res), np.linspace(y0, y1, res))
    pts = np.column_stack([xs.ravel(), ys.ravel()])
    probs, w, c = model.heads(pts)
    if kind == "prediction":
        values = probs[:, 1]
    elif kind == "weight":
        values = w[:, r]
    else:
        y = label_fn(pts)[r]
        diag = c[:, r, :] @ model.basis.diagonals  # (G, K)
        values = diag[np.arange(len(pts)), y]
    table = np.column_stack([pts, values])
    if path is not None:
        with open(path, "w", newline="") as fh:
            w_ = csv.writer(fh)
            w_.writerow(["x", "y", "value"])
            w_.writerows((repr(a), repr(b), repr(v)) for a, b, v in table)
    return table


SWEEP_AXES = {"epsilon": "epsilon", "lambda": "lam", "M": "M"}


def _sweep_cell(base: ExperimentConfig, axis: str, value, method: str, out_dir):
    field_name = SWEEP_AXES[axis]
    kw = {field_name: int(value) if axis == "M" else float(value), "method": method}
    if axis == "epsilon":
        kw["corruption_target"] = None
    if out_dir:
        kw["output_dir"] = str(Path(out_dir) / f"{method.replace(':', '_')}_{axis}={value}")
    try:
        rep = run_experiment(base.replace(**kw))
        return {"axis": axis, "value": value, "method": method, "test_accuracy": rep.test_accuracy,
                "selected_epoch": rep.selected_epoch, "error": ""}
    except SampleFusionError as exc:
        return {"axis": axis, "value": value, "method": method, "test_accuracy": float("nan"),
                "selected_epoch": -1, "error": f"{type(exc).__name__}: {exc}"}


def run_sweep(base: ExperimentConfig, axis: str, values, methods=None, out_csv=None, jobs: int = 1):
    """One experiment per (method, value) with shared seeds; a failing cell is recorded, not raised.

    The CSV mirrors a results table: one row per method, one column per axis value.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {sorted(SWEEP_AXES)}")
    methods = list(methods or [base.method])
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    out_dir = base.output_dir
    jobs_args = [(base, axis, v, m, out_dir) for m in methods for v in values]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as pool:
            cells = list(pool.map(_sweep_cell, *zip(*jobs_args)))
    else:
        cells = [_sweep_cell(*a) for a in jobs_args]
    if out_csv is None and out_dir:
        out_csv = Path(out_dir) / f"sweep_{axis}.csv"
    if out_csv is not None:
        write_sweep_table(cells, methods, values, axis, out_csv)
    return cells


def write_sweep_table(cells, methods, values, axis, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    lookup = {(c["method"], c["value"]): c for c in cells}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method"] + [f"{axis}={v}" for v in values])
        for m in methods:
            w.writerow([m] + [repr(lookup[(m, v)]["test_accuracy"]) for v in values])
