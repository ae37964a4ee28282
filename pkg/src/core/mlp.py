#!/usr/bin/env python3
"""
Small multi-layer perceptrons with analytic backpropagation.

The network keeps optional input/output standardization constants so callers can
train in well-scaled coordinates while predicting in raw ones. ``run_training`` is
the shared epoch/batch/optimizer loop; joint models (learned constants, learned
vectors) reuse it with their own loss-and-gradient closures.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.errors import ConfigError, NonFiniteError, WidthMismatchError

logger = logging.getLogger(__name__)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# activation name -> (f(z), f'(z) given z and f(z))
ACTIVATIONS: Dict[str, Tuple[Callable, Callable]] = {
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "sigmoid": (_sigmoid, lambda z, a: a * (1.0 - a)),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0.0).astype(float)),
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
}


@dataclass
class TrainConfig:
    """Optimizer and architecture settings shared by every trainer."""

    learning_rate: float = 1e-3
    epochs: int = 2000
    batch_size: int = 4096
    seed: int = 0
    validation_fraction: float = 0.0
    optimizer: str = "adam"
    hidden: Tuple[int, ...] = (20, 20, 20)
    activation: str = "tanh"
    standardize_inputs: bool = True
    standardize_outputs: bool = True
    weight_decay: float = 0.0
    restore_best: bool = False
    log_every: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"Unknown optimizer {self.optimizer!r}; use 'adam' or 'sgd'")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"Unknown activation {self.activation!r}; available: {sorted(ACTIVATIONS)}")

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "TrainConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown train settings {sorted(unknown)}; known: {sorted(known)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    def replace(self, **changes) -> "TrainConfig":
        data = asdict(self)
        data.update(changes)
        return TrainConfig(**data)


@dataclass
class MLP:
    """Fully connected network; weights[l] has shape (out, in)."""

    widths: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "tanh"
    seed: int = 0
    first_bias: bool = True
    input_shift: Optional[np.ndarray] = None
    input_scale: Optional[np.ndarray] = None
    output_shift: Optional[np.ndarray] = None
    output_scale: Optional[np.ndarray] = None
    loss_history: List[float] = field(default_factory=list)
    val_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(self.weights):
            raise WidthMismatchError("MLP needs one weight matrix and bias per layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.widths[l + 1], self.widths[l]) or b.shape != (self.widths[l + 1],):
                raise WidthMismatchError(
                    f"Layer {l} has shapes {w.shape}/{b.shape}, expected "
                    f"({self.widths[l + 1]}, {self.widths[l]})/({self.widths[l + 1]},)"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NonFiniteError(f"Layer {l} has non-finite parameters")
        if self.input_shift is None:
            self.input_shift = np.zeros(self.n_inputs)
        if self.input_scale is None:
            self.input_scale = np.ones(self.n_inputs)
        if self.output_shift is None:
            self.output_shift = np.zeros(self.n_outputs)
        if self.output_scale is None:
            self.output_scale = np.ones(self.n_outputs)

    @classmethod
    def initialize(
        cls, widths: Sequence[int], activation: str = "tanh", seed: int = 0, first_bias: bool = True
    ) -> "MLP":
        """Gaussian weights with variance 1/fan_in, zero biases."""
        rng = np.random.default_rng(seed)
        widths = [int(w) for w in widths]
        weights = [rng.normal(0.0, 1.0 / math.sqrt(widths[l]), (widths[l + 1], widths[l])) for l in range(len(widths) - 1)]
        biases = [np.zeros(widths[l + 1]) for l in range(len(widths) - 1)]
        return cls(widths, weights, biases, activation, seed, first_bias)

    @property
    def n_inputs(self) -> int:
        return self.widths[0]

    @property
    def n_outputs(self) -> int:
        return self.widths[-1]

    def parameters(self) -> List[np.ndarray]:
        """Weight and bias arrays interleaved; optimizers update them in place."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, dict]:
        """Batched forward pass; returns raw outputs and the backprop cache."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise WidthMismatchError(f"Expected inputs of width {self.n_inputs}, got shape {x.shape}")
        act, _ = ACTIVATIONS[self.activation]
        a = (x - self.input_shift) / self.input_scale
        acts, zs = [a], []
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T
            if l > 0 or self.first_bias:
                z = z + b
            zs.append(z)
            a = act(z) if l < last else z
            acts.append(a)
        return a * self.output_scale + self.output_shift, {"acts": acts, "zs": zs}

    def backward(self, cache: dict, d_out: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        """
        Gradients of a scalar loss given dL/d(raw output).

        Returns parameter gradients aligned with ``parameters()`` and dL/d(raw input).
        """
        _, deriv = ACTIVATIONS[self.activation]
        acts, zs = cache["acts"], cache["zs"]
        d = np.asarray(d_out, dtype=float) * self.output_scale
        grads: List[np.ndarray] = [None] * (2 * len(self.weights))  # type: ignore[list-item]
        for l in range(len(self.weights) - 1, -1, -1):
            grads[2 * l] = d.T @ acts[l]
            grads[2 * l + 1] = d.sum(axis=0) if (l > 0 or self.first_bias) else np.zeros_like(self.biases[l])
            d = d @ self.weights[l]
            if l > 0:
                d = d * deriv(zs[l - 1], acts[l])
        return grads, d / self.input_scale

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def copy(self) -> "MLP":
        return MLP.from_json(self.to_json())

    def to_json(self) -> dict:
        return {
            "kind": "mlp",
            "widths": list(self.widths),
            "activation": self.activation,
            "seed": self.seed,
            "first_bias": self.first_bias,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "input_shift": self.input_shift.tolist(),
            "input_scale": self.input_scale.tolist(),
            "output_shift": self.output_shift.tolist(),
            "output_scale": self.output_scale.tolist(),
        }

    @classmethod
    def from_json(cls, document: dict) -> "MLP":
        return cls(
            widths=list(document["widths"]),
            weights=[np.array(w, dtype=float).reshape(o, i) for w, o, i in zip(document["weights"], document["widths"][1:], document["widths"][:-1])],
            biases=[np.array(b, dtype=float) for b in document["biases"]],
            activation=document.get("activation", "tanh"),
            seed=int(document.get("seed", 0)),
            first_bias=bool(document.get("first_bias", True)),
            input_shift=np.array(document["input_shift"], dtype=float) if "input_shift" in document else None,
            input_scale=np.array(document["input_scale"], dtype=float) if "input_scale" in document else None,
            output_shift=np.array(document["output_shift"], dtype=float) if "output_shift" in document else None,
            output_scale=np.array(document["output_scale"], dtype=float) if "output_scale" in document else None,
        )


def mlp_predict(m: MLP, x: Sequence[float]) -> List[float]:
    """Forward pass on one input vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != m.n_inputs:
        raise WidthMismatchError(f"Expected {m.n_inputs} inputs, got {x.shape}")
    return m.predict_batch(x[None, :])[0].tolist()


def mlp_input_jacobian(m: MLP, x: Sequence[float]) -> np.ndarray:
    """d output / d input at x, shape (n_outputs, n_inputs), by backpropagation."""
    x = np.asarray(x, dtype=float)[None, :]
    _, cache = m.forward(x)
    rows = []
    for k in range(m.n_outputs):
        d_out = np.zeros((1, m.n_outputs))
        d_out[0, k] = 1.0
        _, d_in = m.backward(cache, d_out)
        rows.append(d_in[0])
    return np.array(rows)


# -------------------------------
# OPTIMIZERS
# -------------------------------


class Adam:
    """Adaptive-moment gradient descent, updating arrays in place."""

    def __init__(self, params: List[np.ndarray], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: List[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params: List[np.ndarray], lr: float = 1e-3):
        self.params = params
        self.lr = lr

    def step(self, grads: List[np.ndarray]) -> None:
        for p, g in zip(self.params, grads):
            p -= self.lr * g


def make_optimizer(cfg: TrainConfig, params: List[np.ndarray]):
    if cfg.optimizer == "sgd":
        return SGD(params, cfg.learning_rate)
    return Adam(params, cfg.learning_rate)


LossFn = Callable[[np.ndarray], Tuple[float, List[np.ndarray]]]


def run_training(
    params: List[np.ndarray],
    loss_and_grads: LossFn,
    n_samples: int,
    cfg: TrainConfig,
    val_loss: Optional[Callable[[], float]] = None,
    label: str = "model",
) -> Tuple[List[float], List[float]]:
    """
    Shared epoch loop.

    ``loss_and_grads(indices)`` returns the batch loss and gradients aligned with
    ``params``. Full batch below ``cfg.batch_size`` samples, seeded shuffled
    minibatches otherwise. Returns (train history, validation history).
    """
    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(cfg, params)
    history: List[float] = []
    val_history: List[float] = []
    best: Optional[Tuple[float, List[np.ndarray]]] = None
    full = np.arange(n_samples)
    for epoch in range(cfg.epochs):
        order = full if n_samples <= cfg.batch_size else rng.permutation(n_samples)
        total, count = 0.0, 0
        for start in range(0, n_samples, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(idx)
            if not math.isfinite(loss):
                raise NonFiniteError(f"{label}: loss became non-finite at epoch {epoch}")
            if cfg.weight_decay:
                grads = [g + cfg.weight_decay * p if p.ndim == 2 else g for g, p in zip(grads, params)]
            optimizer.step(grads)
            total += loss * len(idx)
            count += len(idx)
        history.append(total / count)
        if val_loss is not None:
            v = val_loss()
            val_history.append(v)
            if cfg.restore_best and (best is None or v < best[0]):
                best = (v, [p.copy() for p in params])
        if cfg.log_every and (epoch + 1) % cfg.log_every == 0:
            logger.info("%s epoch %d/%d: train %.4g%s", label, epoch + 1, cfg.epochs, history[-1],
                        f", val {val_history[-1]:.4g}" if val_history else "")
    if best is not None:
        for p, saved in zip(params, best[1]):
            p[...] = saved
    return history, val_history


def split_indices(n: int, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded (train, validation) index split."""
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(fraction * n))
    if fraction > 0 and n > 1:
        n_val = min(max(n_val, 1), n - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _standardizer(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    shift = values.mean(axis=0)
    scale = values.std(axis=0)
    scale = np.where(scale > 0.0, scale, 1.0)
    return shift, scale


def mse_loss(m: MLP, x: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray, dict]:
    """Mean squared error in standardized output units, its output gradient and the cache."""
    out, cache = m.forward(x)
    scaled = (out - y) / m.output_scale
    loss = float(np.mean(scaled**2))
    d_out = 2.0 * scaled / m.output_scale / scaled.size
    return loss, d_out, cache


def train_mlp(data: Tuple[np.ndarray, np.ndarray], cfg: TrainConfig, first_bias: bool = True) -> MLP:
    """Train an MLP on (inputs, targets) with mean-squared-error loss."""
    x = np.asarray(data[0], dtype=float)
    y = np.asarray(data[1], dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if len(x) == 0 or len(x) != len(y):
        raise WidthMismatchError(f"Need equal, non-zero sample counts, got {len(x)} inputs and {len(y)} targets")

    train_idx, val_idx = split_indices(len(x), cfg.validation_fraction, cfg.seed)
    net = MLP.initialize([x.shape[1], *cfg.hidden, y.shape[1]], cfg.activation, cfg.seed, first_bias)
    if cfg.standardize_inputs:
        net.input_shift, net.input_scale = _standardizer(x[train_idx])
    if cfg.standardize_outputs:
        net.output_shift, net.output_scale = _standardizer(y[train_idx])
    if cfg.epochs == 0:
        return net

    xt, yt = x[train_idx], y[train_idx]

    def loss_and_grads(idx: np.ndarray):
        loss, d_out, cache = mse_loss(net, xt[idx], yt[idx])
        grads, _ = net.backward(cache, d_out)
        return loss, grads

    val_loss = None
    if len(val_idx):
        xv, yv = x[val_idx], y[val_idx]

        def val_loss() -> float:
            return mse_loss(net, xv, yv)[0]

    logger.info("Training MLP %s on %d samples for %d epochs", net.widths, len(train_idx), cfg.epochs)
    net.loss_history, net.val_history = run_training(net.parameters(), loss_and_grads, len(train_idx), cfg, val_loss, "mlp")
    return net


def loss_history_frame(history: Sequence[float], val_history: Sequence[float] = ()) -> pd.DataFrame:
    """Epoch-indexed loss history for CSV export."""
    frame = pd.DataFrame({"epoch": np.arange(1, len(history) + 1), "train_loss": list(history)})
    if len(val_history):
        frame["val_loss"] = list(val_history)
    return frame
