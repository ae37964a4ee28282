#!/usr/bin/env python3
"""
Springy Double Pendulum
=======================

What this does
--------------
- Simulates two point masses joined by springs (pivot q0 -> q1 -> q2) under a
  constant gravity vector, with Hamilton's equations and classical RK4.
- Builds train/test datasets of (initial state, later states) pairs from random
  initial conditions around the static equilibrium.
- Runs the three-model comparison: gravity supplied, omitted, or learned as a
  free vector, scored by the state relative error over the test horizon.

Arrays of states have shape (..., 4, 3) in the order q1, q2, p1, p2. Values are in
the base units of the ``PendulumParams`` (kg, m, s).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.dimensions import Quantity, parse_units
from core.errors import ConfigError, SingularityError, SymmetryLabError
from core.geometry import Orthogonal3, Vec3, apply_to_vectors, vec
from core.mlp import TrainConfig

logger = logging.getLogger(__name__)

LENGTH = parse_units("m")
TIME = parse_units("s")
MOMENTUM = parse_units("kg m/s")
VELOCITY = parse_units("m/s")
FORCE = parse_units("kg m/s^2")
ACCELERATION = parse_units("m/s^2")
ENERGY = parse_units("kg m^2/s^2")

SEPARATION_GUARD = 1e-12
STATE_VECTORS = ("q1", "q2", "p1", "p2")


@dataclass(frozen=True, eq=False)
class PendulumParams:
    """Masses (kg), spring constants (kg/s^2), natural lengths (m), pivot and gravity."""

    m1: float = 1.0
    m2: float = 1.0
    k1: float = 1.0
    k2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    q0: Vec3 = field(default_factory=lambda: vec((0.0, 0.0, 0.0), LENGTH))
    g: Vec3 = field(default_factory=lambda: vec((0.0, 0.0, -1.0), ACCELERATION))

    def __post_init__(self):
        for name in ("m1", "m2", "k1", "k2", "l1", "l2"):
            value = getattr(self, name)
            if not (value > 0.0 and math.isfinite(value)):
                raise ConfigError(f"Pendulum parameter {name} must be positive, got {value}")

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "PendulumParams":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown pendulum parameters {sorted(unknown)}; known: {sorted(known)}")
        if "q0" in data:
            data["q0"] = vec(data["q0"], LENGTH)
        if "g" in data:
            data["g"] = vec(data["g"], ACCELERATION)
        return cls(**data)

    def to_dict(self) -> dict:
        out = {name: getattr(self, name) for name in ("m1", "m2", "k1", "k2", "l1", "l2")}
        out["q0"] = self.q0.components.tolist()
        out["g"] = self.g.components.tolist()
        return out

    def rotated(self, R: Orthogonal3) -> "PendulumParams":
        """Same system with pivot and gravity rotated."""
        return PendulumParams(
            self.m1, self.m2, self.k1, self.k2, self.l1, self.l2,
            Vec3(R.matrix @ self.q0.components, self.q0.dim),
            Vec3(R.matrix @ self.g.components, self.g.dim),
        )


@dataclass(frozen=True, eq=False)
class PendulumState:
    q1: Vec3
    q2: Vec3
    p1: Vec3
    p2: Vec3

    def to_array(self) -> np.ndarray:
        return np.stack([self.q1.components, self.q2.components, self.p1.components, self.p2.components])

    @classmethod
    def from_array(cls, z: np.ndarray) -> "PendulumState":
        z = np.asarray(z, dtype=float).reshape(4, 3)
        return cls(Vec3(z[0], LENGTH), Vec3(z[1], LENGTH), Vec3(z[2], MOMENTUM), Vec3(z[3], MOMENTUM))

    def rotated(self, R: Orthogonal3) -> "PendulumState":
        return PendulumState.from_array(apply_to_vectors(R.matrix, self.to_array()))


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: Tuple[PendulumState, ...]

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise SymmetryLabError("Trajectory needs one state per time")
        if np.any(np.diff(self.times) <= 0.0):
            raise SymmetryLabError("Trajectory times must be strictly increasing")

    def to_array(self) -> np.ndarray:
        return np.stack([s.to_array() for s in self.states])


# -------------------------------
# 1) PHYSICS
# -------------------------------


def _springs(z: np.ndarray, p: PendulumParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Spring vectors q1-q0, q2-q1 and their lengths; raises on coincident points."""
    d1 = z[..., 0, :] - p.q0.components
    d2 = z[..., 1, :] - z[..., 0, :]
    r1 = np.sqrt(np.sum(d1**2, axis=-1))
    r2 = np.sqrt(np.sum(d2**2, axis=-1))
    if np.any(r1 < SEPARATION_GUARD) or np.any(r2 < SEPARATION_GUARD):
        raise SingularityError("Coincident pendulum points: spring direction undefined")
    return d1, d2, r1, r2


def energy_arrays(z: np.ndarray, p: PendulumParams) -> Tuple[np.ndarray, np.ndarray]:
    """Kinetic and potential energy of a batch of states."""
    z = np.asarray(z, dtype=float)
    ke = np.sum(z[..., 2, :] ** 2, axis=-1) / (2.0 * p.m1) + np.sum(z[..., 3, :] ** 2, axis=-1) / (2.0 * p.m2)
    d1 = z[..., 0, :] - p.q0.components
    d2 = z[..., 1, :] - z[..., 0, :]
    r1 = np.sqrt(np.sum(d1**2, axis=-1))
    r2 = np.sqrt(np.sum(d2**2, axis=-1))
    g = p.g.components
    pe = (
        0.5 * p.k1 * (r1 - p.l1) ** 2
        + 0.5 * p.k2 * (r2 - p.l2) ** 2
        - p.m1 * (d1 @ g)
        - p.m2 * ((z[..., 1, :] - p.q0.components) @ g)
    )
    return ke, pe


def energies(s: PendulumState, p: PendulumParams) -> Tuple[Quantity, Quantity]:
    ke, pe = energy_arrays(s.to_array(), p)
    return Quantity(float(ke), ENERGY), Quantity(float(pe), ENERGY)


def total_energy(s: PendulumState, p: PendulumParams) -> Quantity:
    ke, pe = energies(s, p)
    return ke + pe


def rhs_array(z: np.ndarray, p: PendulumParams) -> np.ndarray:
    """Hamilton's equations for a batch of states, shape (..., 4, 3)."""
    z = np.asarray(z, dtype=float)
    d1, d2, r1, r2 = _springs(z, p)
    u1 = d1 / r1[..., None]
    u2 = d2 / r2[..., None]
    f1 = (p.k1 * (r1 - p.l1))[..., None] * u1
    f2 = (p.k2 * (r2 - p.l2))[..., None] * u2
    g = p.g.components
    out = np.empty_like(z)
    out[..., 0, :] = z[..., 2, :] / p.m1
    out[..., 1, :] = z[..., 3, :] / p.m2
    out[..., 2, :] = -f1 + f2 + p.m1 * g
    out[..., 3, :] = -f2 + p.m2 * g
    return out


def dynamics_rhs(s: PendulumState, p: PendulumParams) -> PendulumState:
    """Time derivative of the state (velocities in m/s, forces in kg m/s^2)."""
    d = rhs_array(s.to_array(), p)
    return PendulumState(Vec3(d[0], VELOCITY), Vec3(d[1], VELOCITY), Vec3(d[2], FORCE), Vec3(d[3], FORCE))


def equilibrium_state(p: PendulumParams) -> PendulumState:
    """Static rest state hanging along gravity: each spring carries the weight below it."""
    g = p.g.components
    g_norm = float(np.linalg.norm(g))
    down = g / g_norm if g_norm > 0.0 else np.array([0.0, 0.0, -1.0])
    stretch1 = (p.m1 + p.m2) * g_norm / p.k1
    stretch2 = p.m2 * g_norm / p.k2
    q1 = p.q0.components + (p.l1 + stretch1) * down
    q2 = q1 + (p.l2 + stretch2) * down
    zero = np.zeros(3)
    return PendulumState(Vec3(q1, LENGTH), Vec3(q2, LENGTH), Vec3(zero, MOMENTUM), Vec3(zero, MOMENTUM))


# -------------------------------
# 2) INTEGRATION
# -------------------------------


def rk4_step(z: np.ndarray, p: PendulumParams, dt: float) -> np.ndarray:
    k1 = rhs_array(z, p)
    k2 = rhs_array(z + 0.5 * dt * k1, p)
    k3 = rhs_array(z + 0.5 * dt * k2, p)
    k4 = rhs_array(z + dt * k3, p)
    return z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_batch(z0: np.ndarray, p: PendulumParams, dt: float, n_steps: int, record_every: int = 1) -> np.ndarray:
    """
    RK4 over a batch of initial states.

    Returns the states after every ``record_every`` steps, the initial state first:
    shape (n_steps // record_every + 1, n, 4, 3).
    """
    if not dt > 0.0:
        raise SymmetryLabError(f"dt must be positive, got {dt}")
    if n_steps < 0 or record_every < 1:
        raise SymmetryLabError("n_steps must be non-negative and record_every positive")
    z = np.array(z0, dtype=float)
    records = [z.copy()]
    for step in range(1, n_steps + 1):
        z = rk4_step(z, p, dt)
        if step % record_every == 0:
            records.append(z.copy())
    return np.stack(records)


def integrate(s0: PendulumState, p: PendulumParams, dt: float, n_steps: int) -> Trajectory:
    """n_steps + 1 states at times 0, dt, ..., n_steps * dt."""
    zs = integrate_batch(s0.to_array()[None], p, dt, n_steps)[:, 0]
    times = dt * np.arange(n_steps + 1)
    return Trajectory(times, tuple(PendulumState.from_array(z) for z in zs))


# -------------------------------
# 3) DATASETS
# -------------------------------


@dataclass(frozen=True, eq=False)
class PendulumDataset:
    """Initial states and their states at ``times`` later (times measured from t0)."""

    params: PendulumParams
    initial: np.ndarray
    times: np.ndarray
    labels: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        n, t = len(self.initial), len(self.times)
        if self.initial.shape != (n, 4, 3) or self.labels.shape != (n, t, 4, 3):
            raise SymmetryLabError(
                f"Dataset shapes do not match: initial {self.initial.shape}, labels {self.labels.shape}"
            )

    def __len__(self) -> int:
        return len(self.initial)

    def rows(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened (z0, dt, z(dt)) training rows."""
        n, t = len(self.initial), len(self.times)
        z0 = np.repeat(self.initial, t, axis=0)
        dt = np.tile(self.times, n)
        return z0, dt, self.labels.reshape(n * t, 4, 3)

    def to_frame(self) -> pd.DataFrame:
        z0, dt, target = self.rows()
        data: Dict[str, np.ndarray] = {
            "sample": np.repeat(np.arange(len(self.initial)), len(self.times)),
            "t0": np.full(len(dt), self.t0),
            "dt": dt,
        }
        for prefix, arr in (("", z0), ("next_", target)):
            for j, name in enumerate(STATE_VECTORS):
                for c, axis in enumerate("xyz"):
                    data[f"{prefix}{name}.{axis}"] = arr[:, j, c]
        return pd.DataFrame(data)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, params: PendulumParams) -> "PendulumDataset":
        samples = np.unique(frame["sample"].to_numpy())
        times = np.unique(frame["dt"].to_numpy(dtype=float))
        ordered = frame.sort_values(["sample", "dt"])

        def block(prefix: str) -> np.ndarray:
            cols = [f"{prefix}{name}.{axis}" for name in STATE_VECTORS for axis in "xyz"]
            return ordered[cols].to_numpy(dtype=float).reshape(len(samples), len(times), 4, 3)

        return cls(params, block("")[:, 0], times, block("next_"), float(frame["t0"].iloc[0]))

    def save_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False)


def _ball(rng: np.random.Generator, radius: float) -> np.ndarray:
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    return radius * rng.random() ** (1.0 / 3.0) * direction


def sample_initial_states(n: int, seed: int, p: PendulumParams, radius: float = 0.5) -> np.ndarray:
    """Equilibrium positions plus uniform-ball displacements; momenta uniform in a ball."""
    rest = equilibrium_state(p).to_array()
    states = np.empty((n, 4, 3))
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        states[i] = rest + np.stack([_ball(rng, radius) for _ in range(4)])
    return states


def generate_dataset(
    n: int,
    label_count: int,
    seed: int,
    p: Optional[PendulumParams] = None,
    spacing: float = 0.1,
    dt: float = 1e-3,
    radius: float = 0.5,
    t0: float = 0.0,
) -> PendulumDataset:
    """
    ``n`` initial conditions, each labelled at ``label_count`` evenly spaced later times.

    Sample i depends only on (seed, i). With t0 > 0 the sampled state is first evolved
    for t0 seconds.
    """
    p = p or PendulumParams()
    if n < 1 or label_count < 1:
        raise SymmetryLabError("generate_dataset needs n >= 1 and label_count >= 1")
    steps = int(round(spacing / dt))
    if steps < 1 or not math.isclose(steps * dt, spacing, rel_tol=1e-9):
        raise ConfigError(f"Label spacing {spacing} must be a multiple of the integrator step {dt}")
    z = sample_initial_states(n, seed, p, radius)
    if t0 > 0.0:
        warm = int(round(t0 / dt))
        z = integrate_batch(z, p, dt, warm, warm)[-1]
    path = integrate_batch(z, p, dt, steps * label_count, steps)
    labels = np.swapaxes(path[1:], 0, 1)
    times = spacing * np.arange(1, label_count + 1)
    logger.info("Generated %d pendulum samples with %d labels each", n, label_count)
    return PendulumDataset(p, z, times, labels, t0)


def state_rel_err_array(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """||pred - truth|| / (||pred|| + ||truth||) over the last two axes."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    num = np.sqrt(np.sum((pred - truth) ** 2, axis=(-2, -1)))
    den = np.sqrt(np.sum(pred**2, axis=(-2, -1))) + np.sqrt(np.sum(truth**2, axis=(-2, -1)))
    return np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)


def state_rel_err(pred: PendulumState, truth: PendulumState) -> float:
    return float(state_rel_err_array(pred.to_array(), truth.to_array()))


def vector_angle(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cos = float(a @ b) / (float(np.linalg.norm(a)) * float(np.linalg.norm(b)))
    return math.acos(max(-1.0, min(1.0, cos)))


# -------------------------------
# 4) EXPERIMENT
# -------------------------------


@dataclass
class PendulumExperimentConfig:
    params: dict = field(default_factory=dict)
    n_train: int = 500
    train_labels: int = 5
    n_test: int = 100
    test_labels: int = 150
    label_spacing: float = 0.1
    dt: float = 1e-3
    init_radius: float = 0.5
    seed: int = 0
    modes: Tuple[str, ...] = ("known_g", "no_g", "learned_g")
    covtest_trials: int = 8
    covtest_probes: int = 4
    covtest_tolerance: float = 1e-10

    def __post_init__(self):
        self.modes = tuple(self.modes)
        if self.n_train < 1 or self.n_test < 1 or self.train_labels < 1 or self.test_labels < 1:
            raise ConfigError("Sample and label counts must be positive")
        if not (self.label_spacing > 0.0 and self.dt > 0.0 and self.init_radius >= 0.0):
            raise ConfigError("label_spacing and dt must be positive, init_radius non-negative")

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "PendulumExperimentConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown pendulum settings {sorted(unknown)}; known: {sorted(known)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["modes"] = list(self.modes)
        return out


@dataclass(eq=False)
class PendulumReport:
    curves: pd.DataFrame
    mean_rel_err: Dict[str, float]
    covariance: Dict[str, dict]
    learned_vector: Optional[List[float]] = None
    angle: Optional[float] = None
    axis_angle: Optional[float] = None
    models: Dict[str, object] = field(default_factory=dict)
    config: Optional[PendulumExperimentConfig] = None

    def to_json(self) -> dict:
        return {
            "experiment": "pendulum",
            "config": self.config.to_dict() if self.config else None,
            "mean_state_rel_err": self.mean_rel_err,
            "learned_g": None
            if self.learned_vector is None
            else {"vector": self.learned_vector, "angle": self.angle, "axis_angle": self.axis_angle},
            "covariance": self.covariance,
            "curves": self.curves.to_dict(orient="list"),
        }


def run_pendulum_experiment(cfg: PendulumExperimentConfig, train_cfg: Optional[TrainConfig] = None) -> PendulumReport:
    """Train each requested dynamics model and score it over the test horizon."""
    # model and audit both import this module
    from core.audit import CovarianceTestSpec, test_covariance
    from core.model import fit_dynamics

    train_cfg = train_cfg or TrainConfig()
    params = PendulumParams.from_dict(cfg.params)
    train = generate_dataset(cfg.n_train, cfg.train_labels, cfg.seed, params, cfg.label_spacing, cfg.dt, cfg.init_radius)
    test = generate_dataset(cfg.n_test, cfg.test_labels, cfg.seed + 1, params, cfg.label_spacing, cfg.dt, cfg.init_radius)
    z0, dt, truth = test.rows()

    curves = pd.DataFrame({"dt": test.times})
    mean_err, covariance, models = {}, {}, {}
    report = PendulumReport(curves, mean_err, covariance, config=cfg, models=models)
    for mode in cfg.modes:
        model = fit_dynamics(train, mode, train_cfg)
        models[mode] = model
        pred = model.predict_arrays(z0, dt)
        errs = state_rel_err_array(pred, truth).reshape(len(test), len(test.times))
        curves[mode] = errs.mean(axis=0)
        mean_err[mode] = float(errs.mean())

        schema = model.feature_schema()
        probes = []
        for i in range(min(cfg.covtest_probes, len(test))):
            record = {name: test.initial[i, j] for j, name in enumerate(STATE_VECTORS)}
            record.update({"q0": params.q0.components, "dt": float(test.times[min(i, len(test.times) - 1)])})
            if model.hidden_name:
                record[model.hidden_name] = np.asarray(model.hidden, dtype=float)
            probes.append(record)
        spec = CovarianceTestSpec(group="O3", trials=cfg.covtest_trials, seed=cfg.seed, tolerance=cfg.covtest_tolerance)
        cov = test_covariance(model.predict_record, spec, schema, probes, output_schema=model.output_schema())
        covariance[mode] = {"max_deviation": cov.max_deviation, "passed": cov.passed}
        logger.info("%s: mean State.RelErr %.4g, O(3) deviation %.3g", mode, mean_err[mode], cov.max_deviation)

    if "learned_g" in models:
        u = np.asarray(models["learned_g"].hidden, dtype=float)
        report.learned_vector = u.tolist()
        report.angle = vector_angle(u, params.g.components)
        report.axis_angle = min(report.angle, math.pi - report.angle)
        logger.info("Learned vector %s at %.4g rad from gravity (axis %.4g rad)", u, report.angle, report.axis_angle)
    return report
