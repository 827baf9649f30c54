"""Feedforward ReLU regressor trained with ADAM, written directly on numpy.

Weights follow the ``(fan_out, fan_in)`` convention, so a batch ``X`` of
shape ``(n, fan_in)`` maps to ``X @ W.T + b``.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .io import atomic_write_text

LINEAR = "linear"
CLAMPED_UNIT = "clamped_unit"
OUTPUT_ACTIVATIONS = (LINEAR, CLAMPED_UNIT)

RELATIVE_MSE = "relative_mse"
MSE = "mse"
LOSSES = (RELATIVE_MSE, MSE)

FORMAT_NAME = "modelaided-mlp"
FORMAT_VERSION = "1.0"


class ModelFormatError(ValueError):
    """Raised when a model file cannot be parsed."""


class ArchitectureMismatchError(ValueError):
    pass


@dataclass
class MlpModel:
    layer_sizes: tuple
    weights: list
    biases: list
    output_activation: str = LINEAR
    hidden_activation: str = "relu"
    normalization: Optional[dict] = None

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError("layer_sizes needs an input and an output size, all >= 1")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if self.hidden_activation != "relu":
            raise ValueError("only ReLU hidden layers are supported")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("one weight matrix and bias vector per layer transition")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if W.shape != shape or b.shape != (shape[0],):
                raise ValueError(f"layer {i}: expected W{shape}, b({shape[0]},), got W{W.shape}, b{b.shape}")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in self.params():
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def n_parameters(self) -> int:
        return sum(a.size for a in self.params())


def init_mlp(layer_sizes: Sequence[int], output_activation: str = LINEAR, rng_seed: int = 0) -> MlpModel:
    """He-normal weights (std ``sqrt(2/fan_in)``) and zero biases."""
    rng = np.random.default_rng(rng_seed)
    sizes = [int(s) for s in layer_sizes]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * math.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return MlpModel(tuple(sizes), weights, biases, output_activation)


def _as_batch(model: MlpModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise ArchitectureMismatchError(f"model expects {model.n_inputs} inputs, got shape {x.shape}")
    return X, single


def _forward_cache(model: MlpModel, X: np.ndarray):
    """Pre-activations of every layer; the last one is the linear output."""
    pre = []
    h = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
    return pre


def forward(model: MlpModel, x, clamp: bool = True) -> np.ndarray:
    """Evaluate the network on one feature vector or a batch of rows.

    With ``output_activation == "clamped_unit"`` the output is clipped to
    ``[0, 1]`` unless ``clamp`` is False (training uses the linear head).
    """
    X, single = _as_batch(model, x)
    y = _forward_cache(model, X)[-1]
    if clamp and model.output_activation == CLAMPED_UNIT:
        y = np.clip(y, 0.0, 1.0)
    return y[0] if single else y


def relative_mse(predictions, targets) -> float:
    """Mean over samples and outputs of ``((pred - target) / target) ** 2``."""
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    if np.any(t == 0):
        raise ValueError("relative MSE is undefined for zero targets")
    return float(np.mean(((p - t) / t) ** 2))


def mse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    return float(np.mean((p - t) ** 2))


def _loss_and_dout(out, Y, loss, decoder):
    """Loss value and its derivative w.r.t. the raw network output."""
    n_el = out.size
    if loss == MSE:
        r = out - Y
        return float(np.mean(r * r)), 2.0 * r / n_el
    if decoder is None:
        pred, dpred, target = out, 1.0, Y
    else:
        pred, dpred, target = decoder.decode(out), decoder.decode_grad(out), decoder.decode(Y)
    if np.any(target == 0):
        raise ValueError("relative MSE is undefined for zero targets")
    e = (pred - target) / target
    return float(np.mean(e * e)), 2.0 * e / target * dpred / n_el


def evaluate_loss(model: MlpModel, X, Y, loss: str = RELATIVE_MSE, decoder=None, clamp: bool = True) -> float:
    out = forward(model, X, clamp=clamp)
    return _loss_and_dout(out.reshape(np.shape(Y)), np.asarray(Y, dtype=float), loss, decoder)[0]


def loss_and_gradient(model: MlpModel, X, Y, loss: str = RELATIVE_MSE, decoder=None):
    """Batch-mean loss and exact backpropagated gradients.

    Returns ``(loss, grads)`` with ``grads`` ordered like ``model.params()``.
    The ReLU derivative at 0 is taken as 0. With a ``decoder`` (an object
    exposing ``decode(z)`` and ``decode_grad(z)``) the relative error is
    measured after mapping both outputs and targets through ``decode``.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    X, _ = _as_batch(model, X)
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], model.n_outputs)
    pre = _forward_cache(model, X)
    value, delta = _loss_and_dout(pre[-1], Y, loss, decoder)
    grads = [None] * (2 * len(model.weights))
    for i in range(len(model.weights) - 1, -1, -1):
        h_in = X if i == 0 else np.maximum(pre[i - 1], 0.0)
        grads[2 * i] = delta.T @ h_in
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i]) * (pre[i - 1] > 0.0)
    return value, grads


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params: list, grads: list, state: AdamState, learning_rate: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> list:
    """One bias-corrected ADAM update. ``state`` is advanced in place; new parameters are returned."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        out.append(p - learning_rate * m_hat / (np.sqrt(v_hat) + epsilon))
    return out


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    validation_fraction: float = 0.2
    rng_seed: int = 0
    shuffle_each_epoch: bool = True
    loss: str = RELATIVE_MSE

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if not self.learning_rate > 0 or not self.adam_epsilon > 0:
            raise ValueError("learning_rate and adam_epsilon must be positive")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class TrainReport:
    train_curve: list = field(default_factory=list)
    val_curve: list = field(default_factory=list)
    initial_train_loss: float = math.nan
    initial_val_loss: float = math.nan
    seconds: float = 0.0
    checksum: str = ""
    diverged: bool = False
    n_train: int = 0
    n_val: int = 0

    @property
    def final_train_loss(self) -> float:
        return self.train_curve[-1] if self.train_curve else self.initial_train_loss

    @property
    def final_val_loss(self) -> float:
        return self.val_curve[-1] if self.val_curve else self.initial_val_loss


def split_indices(n: int, validation_fraction: float, rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/validation split; at least one training row is kept."""
    perm = np.random.default_rng([int(rng_seed), 0x5EED]).permutation(n)
    n_val = min(int(round(validation_fraction * n)), max(n - 1, 0))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _fit(model: MlpModel, X, Y, config: TrainConfig, decoder) -> tuple[MlpModel, TrainReport]:
    start = time.perf_counter()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise ArchitectureMismatchError(f"model expects {model.n_inputs} inputs, data has shape {X.shape}")
    if Y.shape != (X.shape[0], model.n_outputs):
        raise ArchitectureMismatchError(f"model has {model.n_outputs} outputs, targets have shape {Y.shape}")
    model = model.copy()
    report = TrainReport()
    if config.epochs == 0 or X.shape[0] == 0:
        report.checksum = model.checksum()
        return model, report

    tr, va = split_indices(X.shape[0], config.validation_fraction, config.rng_seed)
    Xt, Yt, Xv, Yv = X[tr], Y[tr], X[va], Y[va]
    report.n_train, report.n_val = len(tr), len(va)

    def losses():
        lt = evaluate_loss(model, Xt, Yt, config.loss, decoder)
        lv = evaluate_loss(model, Xv, Yv, config.loss, decoder) if len(va) else math.nan
        return lt, lv

    report.initial_train_loss, report.initial_val_loss = losses()
    rng = np.random.default_rng([int(config.rng_seed), 0xBA7C])
    state = AdamState.zeros_like(model.params())
    order = np.arange(len(tr))
    for epoch in range(config.epochs):
        if config.shuffle_each_epoch or epoch == 0:
            order = rng.permutation(len(tr))
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            _, grads = loss_and_gradient(model, Xt[idx], Yt[idx], config.loss, decoder)
            new = adam_step(model.params(), grads, state, config.learning_rate,
                            config.adam_beta1, config.adam_beta2, config.adam_epsilon)
            model.weights = new[0::2]
            model.biases = new[1::2]
        lt, lv = losses()
        report.train_curve.append(lt)
        report.val_curve.append(lv)
        if not math.isfinite(lt) or not all(np.all(np.isfinite(p)) for p in model.params()):
            report.diverged = True
            warnings.warn(f"training diverged at epoch {epoch + 1}", RuntimeWarning, stacklevel=3)
            pad = config.epochs - len(report.train_curve)
            report.train_curve += [math.nan] * pad
            report.val_curve += [math.nan] * pad
            break
    report.seconds = time.perf_counter() - start
    report.checksum = model.checksum()
    return model, report


def train(model: MlpModel, X, Y, config: TrainConfig, decoder=None) -> tuple[MlpModel, TrainReport]:
    """Mini-batch ADAM on ``(X, Y)``; the input model is not modified.

    A validation split is drawn once from ``config.rng_seed`` before the first
    epoch, and both curves are recorded after every epoch.
    """
    return _fit(model, X, Y, config, decoder)


def fine_tune(pretrained: MlpModel, X, Y, config: TrainConfig, decoder=None) -> tuple[MlpModel, TrainReport]:
    """Continue training from ``pretrained`` with fresh ADAM moments.

    The architecture is frozen; data of any other shape is rejected.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != pretrained.n_inputs or Y.shape[1:] != (pretrained.n_outputs,):
        raise ArchitectureMismatchError(
            f"pretrained network is {pretrained.layer_sizes}; data has {X.shape[1:]} -> {Y.shape[1:]}")
    return _fit(pretrained, X, Y, config, decoder)


# --- serialization -----------------------------------------------------------

def to_dict(model: MlpModel) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "layer_sizes": list(model.layer_sizes),
        "hidden_activation": model.hidden_activation,
        "output_activation": model.output_activation,
        "normalization": model.normalization,
        "weights": [W.ravel(order="C").tolist() for W in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def from_dict(d: dict) -> MlpModel:
    try:
        if d.get("format") != FORMAT_NAME:
            raise ModelFormatError(f"not a {FORMAT_NAME} file")
        major = str(d["version"]).split(".")[0]
        if major != FORMAT_VERSION.split(".")[0]:
            raise ModelFormatError(f"unsupported format version {d['version']}")
        sizes = [int(s) for s in d["layer_sizes"]]
        weights = [np.array(w, dtype=float).reshape(o, i)
                   for w, i, o in zip(d["weights"], sizes[:-1], sizes[1:], strict=True)]
        biases = [np.array(b, dtype=float) for b in d["biases"]]
        model = MlpModel(tuple(sizes), weights, biases, d["output_activation"],
                         d.get("hidden_activation", "relu"), d.get("normalization"))
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from exc
    if not all(np.all(np.isfinite(p)) for p in model.params()):
        raise ModelFormatError("model file contains non-finite parameters")
    return model


def save(model: MlpModel, path) -> Path:
    # json writes floats with repr(), which round-trips float64 exactly
    return atomic_write_text(path, json.dumps(to_dict(model), indent=1) + "\n")


def load(path) -> MlpModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
        d = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot parse model file {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ModelFormatError("model file must hold a JSON object")
    return from_dict(d)


def replace_config(config: TrainConfig, **changes) -> TrainConfig:
    return dataclasses.replace(config, **changes)


def replace(model: MlpModel, **changes) -> MlpModel:
    return dataclasses.replace(model.copy(), **changes)
