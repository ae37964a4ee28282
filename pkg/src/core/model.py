#!/usr/bin/env python3
"""
Covariant Regression Models
===========================

What this does
--------------
- **Units-covariant regression**: the prediction is a dimensionally valid power
  product of the inputs (the *scaffold*, carrying the target Dimension) times a
  learned function of the dimensionless (Pi) products of the inputs. The learned
  function sees only log-transformed Pi features; with no Pi features it is a
  single fitted prefactor.
- **Dimensional-constant search**: adds one constant of unknown magnitude and
  lattice-enumerated Dimension to the inputs, trains its log-magnitude jointly with
  the inner network, and picks the Dimension with the lowest validation error.
- **Equivariant dynamics**: predicts a future pendulum state as sums of input
  vectors weighted by functions of their pairwise inner products, with gravity
  supplied (``known_g``), omitted (``no_g``) or learned as a free vector
  (``learned_g``).

All fitting is seed-deterministic.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.dimensions import (
    Dimension,
    format_dimension,
    format_rational,
    parse_units,
    solve_target,
    to_rational,
)
from core.errors import ConfigError, InfeasibleError, NonFiniteError, SymmetryLabError
from core.geometry import Vec3, equivariant_combination, gram_matrix
from core.mlp import MLP, TrainConfig, run_training, split_indices
from core.pendulum import (
    LENGTH,
    MOMENTUM,
    TIME,
    ACCELERATION,
    PendulumDataset,
    PendulumState,
)
from core.schema import FeatureSchema

logger = logging.getLogger(__name__)

ColumnData = Mapping[str, Sequence[float]]


def _log_columns(values: ColumnData, names: Sequence[str]) -> np.ndarray:
    """(n, len(names)) array of natural logs; power products need positive values."""
    cols = []
    for name in names:
        v = np.atleast_1d(np.asarray(values[name], dtype=float))
        if np.any(~np.isfinite(v)) or np.any(v <= 0.0):
            raise SymmetryLabError(f"Feature {name!r} must be finite and positive for power products")
        cols.append(np.log(v))
    n = max(len(c) for c in cols)
    return np.stack([np.broadcast_to(c, (n,)) for c in cols], axis=1)


# ===============================
# 1) UNITS-COVARIANT REGRESSION
# ===============================


@dataclass(frozen=True)
class LearnedConstant:
    """A constant with a fixed Dimension and a fitted magnitude (in the data's units)."""

    name: str
    dim: Dimension
    log_magnitude: float

    @property
    def magnitude(self) -> float:
        return math.exp(self.log_magnitude)

    def to_json(self) -> dict:
        return {"name": self.name, "dim": self.dim.to_json(), "log_magnitude": self.log_magnitude}


@dataclass(eq=False)
class UnitsCovariantModel:
    """
    prediction = prod_i x_i**scaffold_i * f(Pi features)

    ``scaffold`` and each ``pi_basis`` row have one exponent per input, plus a last
    entry for the learned constant when there is one. f is ``exp(net(log Pi))``, or
    ``exp(log_alpha)`` when the Pi basis is empty.
    """

    input_names: Tuple[str, ...]
    input_dims: Tuple[Dimension, ...]
    target_name: str
    target_dim: Dimension
    scaffold: Tuple[Fraction, ...]
    pi_basis: Tuple[Tuple[Fraction, ...], ...]
    constant: Optional[LearnedConstant] = None
    log_alpha: float = 0.0
    net: Optional[MLP] = None
    train_mse: Optional[float] = None
    val_mse: Optional[float] = None
    loss_history: List[float] = field(default_factory=list)

    @property
    def all_names(self) -> Tuple[str, ...]:
        return self.input_names + ((self.constant.name,) if self.constant else ())

    @property
    def all_dims(self) -> Tuple[Dimension, ...]:
        return self.input_dims + ((self.constant.dim,) if self.constant else ())

    def _log_inputs(self, values: ColumnData) -> np.ndarray:
        logs = _log_columns(values, self.input_names)
        if self.constant is None:
            return logs
        if self.constant.name in values:
            c = _log_columns(values, [self.constant.name])
            c = np.broadcast_to(c, (len(logs), 1))
        else:
            c = np.full((len(logs), 1), self.constant.log_magnitude)
        return np.concatenate([logs, c], axis=1)

    def predict_log(self, values: ColumnData) -> np.ndarray:
        """Natural log of the prediction; the constant may be overridden by a column."""
        logs = self._log_inputs(values)
        scaffold = np.array([float(e) for e in self.scaffold])
        out = logs @ scaffold
        if self.pi_basis:
            pis = logs @ np.array([[float(e) for e in row] for row in self.pi_basis]).T
            return out + self.net.predict_batch(pis)[:, 0]
        return out + self.log_alpha

    def predict(self, values: ColumnData) -> np.ndarray:
        return np.exp(self.predict_log(values))

    def pi_features(self, values: ColumnData) -> np.ndarray:
        """Dimensionless power products of the inputs (and constant), one column per basis row."""
        logs = self._log_inputs(values)
        if not self.pi_basis:
            return np.zeros((len(logs), 0))
        return np.exp(logs @ np.array([[float(e) for e in row] for row in self.pi_basis]).T)

    def feature_schema(self) -> FeatureSchema:
        """Record layout: every input (and the constant) as a scalar feature."""
        return FeatureSchema.build(
            [(n, "scalar", d) for n, d in zip(self.all_names, self.all_dims)], self.target_dim.units
        )

    def predict_record(self, record: Mapping[str, float]) -> float:
        return float(self.predict({k: [v] for k, v in record.items()})[0])

    def reciprocal(self) -> "UnitsCovariantModel":
        """Same model re-expressed with the inverse constant (Dimension and magnitude inverted)."""
        if self.constant is None:
            raise SymmetryLabError("Model has no learned constant to invert")
        flip = [Fraction(1)] * len(self.input_names) + [Fraction(-1)]
        scaffold = tuple(e * f for e, f in zip(self.scaffold, flip))
        basis, net = [], self.net.copy() if self.net is not None else None
        for k, row in enumerate(self.pi_basis):
            if row[-1] != 0:
                # Pi -> 1/Pi keeps the constant exponent at +1
                basis.append(tuple(-e for e in row[:-1]) + (row[-1],))
                if net is not None:
                    net.weights[0][:, k] *= -1.0
                    net.input_shift[k] = -net.input_shift[k]
            else:
                basis.append(row)
        constant = LearnedConstant(self.constant.name, self.constant.dim ** -1, -self.constant.log_magnitude)
        return replace(self, scaffold=scaffold, pi_basis=tuple(basis), constant=constant, net=net)

    def to_json(self) -> dict:
        return {
            "kind": "units_covariant",
            "inputs": [{"name": n, "dim": d.to_json()} for n, d in zip(self.input_names, self.input_dims)],
            "target": {"name": self.target_name, "dim": self.target_dim.to_json()},
            "base_units": list(self.target_dim.units),
            "scaffold": [format_rational(e) for e in self.scaffold],
            "pi_basis": [[format_rational(e) for e in row] for row in self.pi_basis],
            "constant": self.constant.to_json() if self.constant else None,
            "log_alpha": self.log_alpha,
            "net": self.net.to_json() if self.net is not None else None,
            "train_mse": self.train_mse,
            "val_mse": self.val_mse,
        }

    @classmethod
    def from_json(cls, document: dict) -> "UnitsCovariantModel":
        units = tuple(document.get("base_units", ("kg", "m", "s", "K")))
        constant = None
        if document.get("constant"):
            c = document["constant"]
            constant = LearnedConstant(c["name"], Dimension.from_mapping(c["dim"], units), float(c["log_magnitude"]))
        return cls(
            input_names=tuple(i["name"] for i in document["inputs"]),
            input_dims=tuple(Dimension.from_mapping(i["dim"], units) for i in document["inputs"]),
            target_name=document["target"]["name"],
            target_dim=Dimension.from_mapping(document["target"]["dim"], units),
            scaffold=tuple(to_rational(e) for e in document["scaffold"]),
            pi_basis=tuple(tuple(to_rational(e) for e in row) for row in document["pi_basis"]),
            constant=constant,
            log_alpha=float(document.get("log_alpha", 0.0)),
            net=MLP.from_json(document["net"]) if document.get("net") else None,
            train_mse=document.get("train_mse"),
            val_mse=document.get("val_mse"),
        )


def _pi_rows(nullspace, has_constant: bool) -> List[Tuple[Fraction, ...]]:
    rows = []
    for v in nullspace:
        if has_constant and v[-1] != 0:
            v = tuple(e / v[-1] for e in v)
        rows.append(tuple(v))
    return rows


def fit_units_covariant(
    data: ColumnData,
    inputs: Mapping[str, Dimension],
    target: str,
    target_dim: Dimension,
    extra: Optional[Dimension] = None,
    cfg: Optional[TrainConfig] = None,
    val_data: Optional[ColumnData] = None,
    constant_name: str = "constant",
    constant_step: float = 10.0,
) -> UnitsCovariantModel:
    """
    Fit scaffold * f(Pi) in log space by mean squared log error.

    With ``extra`` the inputs gain a constant of that Dimension whose log-magnitude
    is trained together with the inner network; the network then has no first-layer
    bias so the magnitude is identifiable. Raises InfeasibleError when no power
    product of the inputs (and constant) carries ``target_dim``.
    """
    cfg = cfg or TrainConfig()
    names = tuple(inputs)
    dims = tuple(inputs[n] for n in names)
    if constant_name in names:
        raise ConfigError(f"Constant name {constant_name!r} clashes with an input")
    all_dims = dims + ((extra,) if extra is not None else ())
    solution = solve_target(list(all_dims), target_dim)
    scaffold = solution.particular
    pi_basis = tuple(_pi_rows(solution.nullspace, extra is not None))

    logs = _log_columns(data, names)
    y_log = _log_columns(data, [target])[:, 0]
    n = len(y_log)
    if n == 0:
        raise SymmetryLabError("Cannot fit on an empty dataset")
    s_in = np.array([float(e) for e in scaffold[: len(names)]])
    e_c = float(scaffold[-1]) if extra is not None else 0.0
    base = logs @ s_in
    pi_in = np.array([[float(e) for e in row[: len(names)]] for row in pi_basis]).reshape(len(pi_basis), len(names))
    n_c = np.array([float(row[-1]) for row in pi_basis]) if extra is not None else np.zeros(len(pi_basis))
    z_rest = logs @ pi_in.T

    # data-centred start: the constant's Pi feature averages to 1 (log 0)
    theta0 = 0.0
    if extra is not None:
        if np.any(n_c != 0.0):
            k = int(np.flatnonzero(n_c)[0])
            theta0 = -float(np.mean(z_rest[:, k])) / n_c[k]
        elif e_c != 0.0:
            theta0 = float(np.mean(y_log - base)) / e_c

    def make_model(net: Optional[MLP], theta: float, log_alpha: float) -> UnitsCovariantModel:
        constant = LearnedConstant(constant_name, extra, theta) if extra is not None else None
        return UnitsCovariantModel(names, dims, target, target_dim, tuple(scaffold), pi_basis, constant, log_alpha, net)

    if not pi_basis:
        if e_c != 0.0:
            model = make_model(None, float(np.mean(y_log - base)) / e_c, 0.0)
        else:
            model = make_model(None, theta0, float(np.mean(y_log - base)))
    else:
        first_bias = extra is None or not np.any(n_c != 0.0)
        net = MLP.initialize([len(pi_basis), *cfg.hidden, 1], cfg.activation, cfg.seed, first_bias=first_bias)
        z0 = z_rest + theta0 * n_c
        if cfg.standardize_inputs:
            scale = z0.std(axis=0)
            net.input_scale = np.where(scale > 0.0, scale, 1.0)
            if first_bias:
                net.input_shift = z0.mean(axis=0)
        resid0 = y_log - base - e_c * theta0
        if cfg.standardize_outputs:
            net.output_shift = np.array([resid0.mean()])
            net.output_scale = np.array([resid0.std() or 1.0])

        phi = np.zeros(1)
        learn_constant = extra is not None and (np.any(n_c != 0.0) or e_c != 0.0)

        def theta() -> float:
            return theta0 + constant_step * float(phi[0])

        def loss_and_grads(idx: np.ndarray):
            t = theta()
            out, cache = net.forward(z_rest[idx] + t * n_c)
            r = base[idx] + e_c * t + out[:, 0] - y_log[idx]
            d_out = 2.0 * r[:, None] / len(idx)
            grads, d_z = net.backward(cache, d_out)
            if learn_constant:
                d_theta = float(d_out.sum()) * e_c + float(np.sum(d_z @ n_c))
                grads.append(np.array([d_theta * constant_step]))
            return float(np.mean(r**2)), grads

        val_loss = None
        if val_data is not None:

            def val_loss() -> float:
                m = make_model(net, theta(), 0.0)
                return float(np.mean((m.predict_log(val_data) - _log_columns(val_data, [target])[:, 0]) ** 2))

        params = net.parameters() + ([phi] if learn_constant else [])
        label = f"units-covariant[{format_dimension(extra)}]" if extra is not None else "units-covariant"
        history, _ = run_training(params, loss_and_grads, n, cfg, val_loss, label)
        model = make_model(net, theta(), 0.0)
        model.loss_history = history

    model.train_mse = float(np.mean((model.predict_log(data) - y_log) ** 2))
    if val_data is not None:
        model.val_mse = float(np.mean((model.predict_log(val_data) - _log_columns(val_data, [target])[:, 0]) ** 2))
    if not math.isfinite(model.train_mse):
        raise NonFiniteError("Units-covariant fit produced non-finite predictions")
    logger.info(
        "Fitted units-covariant model (%d Pi features%s): train MSE %.4g",
        len(pi_basis),
        f", constant {format_dimension(extra)} = {model.constant.magnitude:.4g}" if extra is not None else "",
        model.train_mse,
    )
    return model


# ===============================
# 2) DIMENSIONAL-CONSTANT SEARCH
# ===============================


@dataclass
class SearchConfig:
    lattice_bound: int = 1
    tie_rtol: float = 0.05
    improvement_margin: float = 0.1
    workers: int = 1
    constant_name: str = "constant"
    constant_step: float = 10.0

    def __post_init__(self):
        if self.lattice_bound < 1:
            raise ConfigError(f"lattice_bound must be at least 1, got {self.lattice_bound}")
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")
        if self.tie_rtol < 0 or self.improvement_margin < 0:
            raise ConfigError("tie_rtol and improvement_margin must be non-negative")

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "SearchConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown search settings {sorted(unknown)}; known: {sorted(known)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class ConstantSearchResult:
    table: pd.DataFrame
    best_exponents: Tuple[int, ...]
    best_dim: Dimension
    best_magnitude: float
    best_val_mse: float
    baseline_val_mse: float
    constant_needed: bool
    best_model: Optional[UnitsCovariantModel] = None
    baseline_model: Optional[UnitsCovariantModel] = None

    def to_json(self) -> dict:
        return {
            "dimension": format_dimension(self.best_dim),
            "exponents": dict(zip(self.best_dim.units, self.best_exponents)),
            "magnitude": self.best_magnitude,
            "val_mse": self.best_val_mse,
            "baseline_val_mse": self.baseline_val_mse if math.isfinite(self.baseline_val_mse) else None,
            "constant_needed": self.constant_needed,
            "scores": [
                {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in row.items()}
                for row in self.table.to_dict(orient="records")
            ],
        }


def candidate_seed(seed: int, exponents: Sequence[int], bound: int) -> int:
    """Per-candidate seed derived from the base seed and the exponent tuple."""
    entropy = [int(seed)] + [int(e) + bound for e in exponents]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _canonical(exponents: Tuple[int, ...]) -> bool:
    """One orientation per reciprocal pair: first nonzero exponent negative."""
    return next(e for e in exponents if e != 0) < 0


def search_dimensional_constant(
    data: ColumnData,
    inputs: Mapping[str, Dimension],
    target: str,
    target_dim: Dimension,
    cfg: Optional[TrainConfig] = None,
    search: Optional[SearchConfig] = None,
    val_data: Optional[ColumnData] = None,
) -> ConstantSearchResult:
    """
    Try every constant Dimension in {-b..b}^units (zero excluded) and keep the one
    whose units-covariant model has the lowest validation MSE.

    Reciprocal Dimensions give the same hypothesis class, so one of each pair is
    trained and the other inherits its score with the magnitude inverted.
    """
    cfg = cfg or TrainConfig()
    search = search or SearchConfig()
    if val_data is None:
        frame = pd.DataFrame({k: np.asarray(v, dtype=float) for k, v in data.items()})
        train_idx, val_idx = split_indices(len(frame), cfg.validation_fraction or 0.25, cfg.seed)
        data, val_data = frame.iloc[train_idx].reset_index(drop=True), frame.iloc[val_idx].reset_index(drop=True)
    units = target_dim.units
    bound = search.lattice_bound

    try:
        baseline = fit_units_covariant(data, inputs, target, target_dim, None, cfg, val_data)
        baseline_mse = baseline.val_mse
    except InfeasibleError:
        logger.warning("No constant-free model reaches %s", format_dimension(target_dim))
        baseline, baseline_mse = None, math.inf

    lattice = [e for e in itertools.product(range(-bound, bound + 1), repeat=len(units)) if any(e)]
    canonical = [e for e in lattice if _canonical(e)]

    def fit_candidate(exponents: Tuple[int, ...]):
        dim = Dimension(exponents, units)
        seed = candidate_seed(cfg.seed, exponents, bound)
        try:
            model = fit_units_covariant(
                data, inputs, target, target_dim, dim, cfg.replace(seed=seed), val_data,
                search.constant_name, search.constant_step,
            )
            return exponents, model, "ok"
        except InfeasibleError:
            return exponents, None, "infeasible"
        except NonFiniteError:
            return exponents, None, "nonfinite"

    logger.info("Searching %d constant Dimensions (%d trainings)", len(lattice), len(canonical))
    if search.workers > 1:
        with ThreadPoolExecutor(max_workers=search.workers) as pool:
            fitted = list(pool.map(fit_candidate, canonical))
    else:
        fitted = [fit_candidate(e) for e in canonical]

    models: Dict[Tuple[int, ...], Optional[UnitsCovariantModel]] = {}
    status: Dict[Tuple[int, ...], str] = {}
    trained: Dict[Tuple[int, ...], bool] = {}
    for exponents, model, state in fitted:
        recip = tuple(-e for e in exponents)
        models[exponents], status[exponents], trained[exponents] = model, state, True
        models[recip] = model.reciprocal() if model is not None else None
        status[recip], trained[recip] = state, False

    rows = []
    for e in lattice:
        m = models[e]
        rows.append(
            {
                **dict(zip(units, e)),
                "dimension": format_dimension(Dimension(e, units)),
                "val_mse": m.val_mse if m is not None else math.inf,
                "log_magnitude": m.constant.log_magnitude if m is not None else math.nan,
                "magnitude": m.constant.magnitude if m is not None else math.nan,
                "trained": trained[e],
                "status": status[e],
            }
        )
        logger.debug("constant %s: val MSE %s", rows[-1]["dimension"], rows[-1]["val_mse"])
    table = pd.DataFrame(rows)

    scores = table["val_mse"].to_numpy(dtype=float)
    if not np.any(np.isfinite(scores)):
        raise NonFiniteError("Every constant candidate failed to train")
    best_score = float(np.min(scores))
    tied = [i for i, s in enumerate(scores) if math.isfinite(s) and s <= best_score * (1.0 + search.tie_rtol)]

    def preference(i: int):
        e = lattice[i]
        return (table.at[i, "log_magnitude"] < 0.0, -sum(abs(x) for x in e), e)

    best_i = min(tied, key=preference)
    best_e = lattice[best_i]
    best_model = models[best_e]
    needed = bool(not math.isfinite(baseline_mse) or scores[best_i] < baseline_mse * (1.0 - search.improvement_margin))
    if not needed:
        logger.warning(
            "No constant needed: best candidate %s (%.4g) does not beat the baseline (%.4g) by %.0f%%",
            table.at[best_i, "dimension"], scores[best_i], baseline_mse, 100 * search.improvement_margin,
        )
    else:
        logger.info(
            "Selected constant %s with magnitude %.4g (val MSE %.4g, baseline %.4g)",
            table.at[best_i, "dimension"], best_model.constant.magnitude, scores[best_i], baseline_mse,
        )
    return ConstantSearchResult(
        table=table,
        best_exponents=best_e,
        best_dim=Dimension(best_e, units),
        best_magnitude=best_model.constant.magnitude,
        best_val_mse=float(scores[best_i]),
        baseline_val_mse=baseline_mse,
        constant_needed=needed,
        best_model=best_model,
        baseline_model=baseline,
    )


# ===============================
# 3) EQUIVARIANT DYNAMICS
# ===============================

MODES = ("known_g", "no_g", "learned_g")
STATE_NAMES = ("q1", "q2", "p1", "p2")
STATE_DIMS = (LENGTH, LENGTH, MOMENTUM, MOMENTUM)


def _basis_roles(mode: str) -> Tuple[str, ...]:
    roles = ("q1-q0", "q2-q0", "p1", "p2")
    if mode == "known_g":
        return roles + ("g",)
    if mode == "learned_g":
        return roles + ("u",)
    return roles


def dynamics_basis(z0: np.ndarray, q0: np.ndarray, extra: Optional[np.ndarray] = None) -> np.ndarray:
    """(n, K, 3) basis vectors [q1-q0, q2-q0, p1, p2, (g | u)] from (n, 4, 3) states."""
    z0 = np.asarray(z0, dtype=float)
    q0 = np.broadcast_to(np.asarray(q0, dtype=float), (len(z0), 3))
    parts = [z0[:, 0] - q0, z0[:, 1] - q0, z0[:, 2], z0[:, 3]]
    if extra is not None:
        parts.append(np.broadcast_to(np.asarray(extra, dtype=float), (len(z0), 3)))
    return np.stack(parts, axis=1)


def invariant_features(basis: np.ndarray, dt: np.ndarray) -> np.ndarray:
    """Upper triangle (with diagonal) of each Gram matrix, then dt."""
    k = basis.shape[1]
    iu = np.triu_indices(k)
    gram = gram_matrix(basis)
    return np.concatenate([gram[:, iu[0], iu[1]], np.asarray(dt, dtype=float).reshape(-1, 1)], axis=1)


@dataclass(eq=False)
class DynamicsModel:
    """
    Maps (z(0), q0, dt) to z(dt): each predicted vector is sum_j c_oj(invariants) V_j.

    ``hidden`` is the supplied gravity (known_g) or the learned vector u (learned_g).
    """

    mode: str
    net: MLP
    q0: np.ndarray
    hidden: Optional[np.ndarray] = None
    loss_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"Unknown dynamics mode {self.mode!r}; use one of {MODES}")
        if self.mode != "no_g" and self.hidden is None:
            raise ConfigError(f"Mode {self.mode} needs a hidden vector")
        k = len(self.roles)
        if self.net.n_inputs != k * (k + 1) // 2 + 1 or self.net.n_outputs != 4 * k:
            raise ConfigError(f"Coefficient network {self.net.widths} does not fit mode {self.mode}")

    @property
    def roles(self) -> Tuple[str, ...]:
        return _basis_roles(self.mode)

    @property
    def hidden_name(self) -> Optional[str]:
        return {"known_g": "g", "learned_g": "u"}.get(self.mode)

    def coefficients(self, basis: np.ndarray, dt: np.ndarray) -> Tuple[np.ndarray, dict]:
        out, cache = self.net.forward(invariant_features(basis, dt))
        return out.reshape(len(basis), 4, basis.shape[1]), cache

    def predict_arrays(
        self, z0: np.ndarray, dt: np.ndarray, q0: Optional[np.ndarray] = None, hidden: Optional[np.ndarray] = None
    ) -> np.ndarray:
        """Batched prediction, (n, 4, 3) states from (n, 4, 3) initial states."""
        q0 = self.q0 if q0 is None else np.asarray(q0, dtype=float)
        extra = None if self.mode == "no_g" else (self.hidden if hidden is None else hidden)
        basis = dynamics_basis(z0, q0, extra)
        coeffs, _ = self.coefficients(basis, dt)
        pred = np.einsum("noj,njd->nod", coeffs, basis)
        pred[:, :2] += np.broadcast_to(q0, (len(basis), 3))[:, None, :]
        return pred

    def feature_schema(self) -> FeatureSchema:
        entries = [(n, "vector3", d) for n, d in zip(STATE_NAMES, STATE_DIMS)]
        entries += [("q0", "vector3", LENGTH), ("dt", "scalar", TIME)]
        if self.hidden_name:
            entries.append((self.hidden_name, "vector3", ACCELERATION))
        return FeatureSchema.build(entries)

    def output_schema(self) -> FeatureSchema:
        return FeatureSchema.build([(n, "vector3", d) for n, d in zip(STATE_NAMES, STATE_DIMS)])

    def predict_record(self, record: Mapping[str, object]) -> Dict[str, np.ndarray]:
        z0 = np.stack([np.asarray(record[n], dtype=float) for n in STATE_NAMES])[None]
        hidden = record.get(self.hidden_name) if self.hidden_name else None
        pred = self.predict_arrays(
            z0,
            np.array([float(record.get("dt", 0.0))]),
            record.get("q0"),
            None if hidden is None else np.asarray(hidden, dtype=float),
        )[0]
        return dict(zip(STATE_NAMES, pred))

    def to_json(self) -> dict:
        return {
            "kind": "dynamics",
            "mode": self.mode,
            "roles": list(self.roles),
            "q0": self.q0.tolist(),
            "hidden": None if self.hidden is None else np.asarray(self.hidden).tolist(),
            "net": self.net.to_json(),
        }

    @classmethod
    def from_json(cls, document: dict) -> "DynamicsModel":
        hidden = document.get("hidden")
        return cls(
            mode=document["mode"],
            net=MLP.from_json(document["net"]),
            q0=np.array(document.get("q0", [0.0, 0.0, 0.0]), dtype=float),
            hidden=None if hidden is None else np.array(hidden, dtype=float),
        )


def init_dynamics_net(mode: str, cfg: TrainConfig, features: Optional[np.ndarray] = None) -> MLP:
    """
    Coefficient network whose untrained output is the identity selection
    (zero last-layer weights, bias picking q1-q0, q2-q0, p1, p2).
    """
    k = len(_basis_roles(mode))
    net = MLP.initialize([k * (k + 1) // 2 + 1, *cfg.hidden, 4 * k], cfg.activation, cfg.seed)
    net.weights[-1][...] = 0.0
    bias = np.zeros((4, k))
    bias[np.arange(4), np.arange(4)] = 1.0
    net.biases[-1][...] = bias.ravel()
    if features is not None and cfg.standardize_inputs:
        scale = features.std(axis=0)
        net.input_shift = features.mean(axis=0)
        net.input_scale = np.where(scale > 0.0, scale, 1.0)
    return net


def fit_dynamics(trainset: PendulumDataset, mode: str, cfg: Optional[TrainConfig] = None) -> DynamicsModel:
    """
    Train a coefficient network (and u in learned_g mode) on every (z0, dt, z(dt))
    row of the dataset with the mean squared Euclidean error of the four output vectors.
    """
    cfg = cfg or TrainConfig()
    if mode not in MODES:
        raise ConfigError(f"Unknown dynamics mode {mode!r}; use one of {MODES}")
    z0, dt, targets = trainset.rows()
    n = len(z0)
    q0 = np.asarray(trainset.params.q0.components, dtype=float)

    u = None
    if mode == "known_g":
        hidden = np.asarray(trainset.params.g.components, dtype=float).copy()
    elif mode == "learned_g":
        u = np.random.default_rng(cfg.seed).standard_normal(3)
        hidden = u
    else:
        hidden = None

    net = init_dynamics_net(mode, cfg, invariant_features(dynamics_basis(z0, q0, hidden), dt))
    model = DynamicsModel(mode, net, q0, hidden)
    k = len(model.roles)
    iu = np.triu_indices(k)

    def loss_and_grads(idx: np.ndarray):
        basis = dynamics_basis(z0[idx], q0, hidden)
        coeffs, cache = model.coefficients(basis, dt[idx])
        pred = np.einsum("noj,njd->nod", coeffs, basis)
        pred[:, :2] += q0
        diff = pred - targets[idx]
        m = len(idx)
        loss = float(np.sum(diff**2)) / (m * 4)
        d_pred = 2.0 * diff / (m * 4)
        d_coeffs = np.einsum("nod,njd->noj", d_pred, basis)
        grads, d_feat = net.backward(cache, d_coeffs.reshape(m, 4 * k))
        if u is not None:
            d_basis = np.einsum("noj,nod->njd", coeffs, d_pred)
            sym = np.zeros((m, k, k))
            sym[:, iu[0], iu[1]] = d_feat[:, :-1]
            sym = sym + np.swapaxes(sym, 1, 2)
            d_basis += sym @ basis
            grads.append(d_basis[:, -1].sum(axis=0))
        return loss, grads

    params = net.parameters() + ([u] if u is not None else [])
    logger.info("Training %s dynamics model on %d rows for %d epochs", mode, n, cfg.epochs)
    model.loss_history, _ = run_training(params, loss_and_grads, n, cfg, None, f"dynamics[{mode}]")
    if u is not None and not np.all(np.isfinite(u)):
        raise NonFiniteError("Learned vector became non-finite")
    return model


def predict_dynamics(
    m: DynamicsModel,
    z0: PendulumState,
    times: Sequence[float],
    q0: Optional[Vec3] = None,
    hidden: Optional[Vec3] = None,
) -> List[PendulumState]:
    """One predicted state per dt, each straight from z0 (no rollout)."""
    if len(times) == 0:
        raise SymmetryLabError("predict_dynamics needs at least one time")
    q0_arr = m.q0 if q0 is None else q0.components
    extra = None
    if m.mode != "no_g":
        extra = m.hidden if hidden is None else hidden.components
    dt = np.asarray(times, dtype=float)
    z = np.repeat(z0.to_array()[None], len(dt), axis=0)
    basis = dynamics_basis(z, q0_arr, extra)
    coeffs, _ = m.coefficients(basis, dt)
    states = []
    for i in range(len(dt)):
        vectors = [Vec3(v) for v in basis[i]]
        outputs = []
        for o, dim in enumerate(STATE_DIMS):
            combined = equivariant_combination(coeffs[i, o], vectors).components
            if o < 2:
                combined = combined + q0_arr
            outputs.append(Vec3(combined, dim))
        states.append(PendulumState(*outputs))
    return states


# ===============================
# 4) PERSISTENCE
# ===============================


def model_from_json(document: dict):
    """Rebuild any saved model from its ``kind`` tag."""
    kind = document.get("kind")
    if kind == "mlp":
        return MLP.from_json(document)
    if kind == "units_covariant":
        return UnitsCovariantModel.from_json(document)
    if kind == "dynamics":
        return DynamicsModel.from_json(document)
    raise ConfigError(f"Unknown model kind {kind!r}; expected mlp, units_covariant or dynamics")


def save_model(model, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(model.to_json(), f, indent=2)


def load_model(path: str):
    if not os.path.exists(path):
        raise FileNotFoundError(f"Model file not found: {path}")
    with open(path, "r") as f:
        return model_from_json(json.load(f))


def parse_input_dims(spec: Mapping[str, str], units: Sequence[str] = ("kg", "m", "s", "K")) -> Dict[str, Dimension]:
    """{'name': 'unit string'} -> {'name': Dimension}, preserving order."""
    return {name: parse_units(text, units) for name, text in spec.items()}
