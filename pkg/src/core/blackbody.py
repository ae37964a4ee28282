#!/usr/bin/env python3
"""
Blackbody Radiation Experiment
==============================

What this does
--------------
- Evaluates Planck's law for spectral intensity per unit wavelength with exact
  Dimension checks on every input.
- Generates noisy (wavelength, temperature, intensity) samples.
- Compares three regressors on log-intensity:
    1) units-covariant model on (wavelength, temperature, c, k) only
    2) units-covariant model with a searched dimensional constant
    3) a plain MLP on (wavelength, temperature) in SI units, standardized per input
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from core.dimensions import Dimension, Quantity, format_dimension, parse_units
from core.errors import ConfigError, DimensionError
from core.mlp import MLP, TrainConfig, train_mlp
from core.model import (
    ConstantSearchResult,
    SearchConfig,
    UnitsCovariantModel,
    fit_units_covariant,
    search_dimensional_constant,
)

logger = logging.getLogger(__name__)

WAVELENGTH = parse_units("m")
TEMPERATURE = parse_units("K")
SPEED = parse_units("m/s")
BOLTZMANN = parse_units("kg m^2 s^-2 K^-1")
ACTION = parse_units("kg m^2/s")
INTENSITY = parse_units("kg/m/s^3")

INPUTS: Dict[str, Dimension] = {
    "wavelength": WAVELENGTH,
    "temperature": TEMPERATURE,
    "c": SPEED,
    "k": BOLTZMANN,
}
TARGET = "intensity"


@dataclass(frozen=True)
class PhysConstants:
    c: Quantity = Quantity(299792458.0, SPEED)
    k: Quantity = Quantity(1.380649e-23, BOLTZMANN)
    h: Quantity = Quantity(6.62607015e-34, ACTION)

    def __post_init__(self):
        for name, dim in (("c", SPEED), ("k", BOLTZMANN), ("h", ACTION)):
            q = getattr(self, name)
            if q.dim != dim:
                raise DimensionError(f"Constant {name} must have units {format_dimension(dim)}, got {format_dimension(q.dim)}")
            if not q.value > 0.0:
                raise ConfigError(f"Constant {name} must be positive, got {q.value}")

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "PhysConstants":
        data = dict(data or {})
        unknown = set(data) - {"c", "k", "h"}
        if unknown:
            raise ConfigError(f"Unknown constants {sorted(unknown)}; known: ['c', 'h', 'k']")
        defaults = cls()
        return cls(
            Quantity(float(data.get("c", defaults.c.value)), SPEED),
            Quantity(float(data.get("k", defaults.k.value)), BOLTZMANN),
            Quantity(float(data.get("h", defaults.h.value)), ACTION),
        )

    def reference_constant(self) -> Quantity:
        """c k / h^2, the physical combination with units kg^-1 m^-1 s^-1 K^-1."""
        return self.c * self.k / (self.h * self.h)


def planck_array(wavelength: np.ndarray, temperature: np.ndarray, c: float, k: float, h: float) -> np.ndarray:
    """B = 2 h c^2 / wavelength^5 / (exp(h c / (wavelength k T)) - 1), elementwise."""
    lam = np.asarray(wavelength, dtype=float)
    x = h * c / (lam * k * np.asarray(temperature, dtype=float))
    return 2.0 * h * c**2 / lam**5 / np.expm1(x)


def planck_intensity(lam: Quantity, T: Quantity, consts: Optional[PhysConstants] = None) -> Quantity:
    """Spectral intensity per unit wavelength, Dimension kg m^-1 s^-3."""
    consts = consts or PhysConstants()
    if lam.dim != WAVELENGTH:
        raise DimensionError(f"Wavelength must be a length, got {format_dimension(lam.dim)}")
    if T.dim != TEMPERATURE:
        raise DimensionError(f"Temperature must be in K, got {format_dimension(T.dim)}")
    if not (lam.value > 0.0 and T.value > 0.0):
        raise ConfigError("Wavelength and temperature must be positive")
    c, k, h = consts.c, consts.k, consts.h
    exponent = (h * c / (lam * k * T)).value
    prefactor = Quantity(2.0, Dimension.dimensionless()) * h * c * c / lam**5
    return Quantity(prefactor.value / math.expm1(exponent), prefactor.dim)


@dataclass
class BlackbodyConfig:
    wavelength_range: Tuple[float, float] = (2e-7, 5e-5)
    temperature_range: Tuple[float, float] = (300.0, 8000.0)
    n_samples: int = 5000
    noise: float = 0.05
    seed: int = 0
    split: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    baseline_standardize: bool = True
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        self.wavelength_range = tuple(float(v) for v in self.wavelength_range)
        self.temperature_range = tuple(float(v) for v in self.temperature_range)
        self.split = tuple(float(v) for v in self.split)
        for name in ("wavelength_range", "temperature_range"):
            lo, hi = getattr(self, name)
            if not 0.0 < lo < hi:
                raise ConfigError(f"{name} must satisfy 0 < low < high, got {(lo, hi)}")
        if self.n_samples < 3:
            raise ConfigError(f"n_samples must be at least 3, got {self.n_samples}")
        if self.noise < 0.0:
            raise ConfigError(f"noise must be non-negative, got {self.noise}")
        if len(self.split) != 3 or any(f <= 0.0 for f in self.split) or not math.isclose(sum(self.split), 1.0):
            raise ConfigError(f"split must be three positive fractions summing to 1, got {self.split}")

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "BlackbodyConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown blackbody settings {sorted(unknown)}; known: {sorted(known)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("wavelength_range", "temperature_range", "split"):
            out[key] = list(out[key])
        return out


def generate_blackbody(cfg: BlackbodyConfig, consts: Optional[PhysConstants] = None) -> pd.DataFrame:
    """
    Columns wavelength, temperature, c, k, intensity (noisy) and intensity_clean.

    Wavelengths are log-uniform, temperatures uniform, noise multiplicative Gaussian.
    """
    consts = consts or PhysConstants.from_dict(cfg.constants)
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.wavelength_range
    lam = np.exp(rng.uniform(math.log(lo), math.log(hi), cfg.n_samples))
    temp = rng.uniform(*cfg.temperature_range, cfg.n_samples)
    clean = planck_array(lam, temp, consts.c.value, consts.k.value, consts.h.value)
    noisy = clean * (1.0 + cfg.noise * rng.standard_normal(cfg.n_samples))
    if np.any(noisy <= 0.0):
        raise ConfigError(f"Noise level {cfg.noise} produced non-positive intensities")
    return pd.DataFrame(
        {
            "wavelength": lam,
            "temperature": temp,
            "c": consts.c.value,
            "k": consts.k.value,
            TARGET: noisy,
            "intensity_clean": clean,
        }
    )


def split_frame(frame: pd.DataFrame, fractions: Tuple[float, float, float], seed: int) -> Tuple[pd.DataFrame, ...]:
    """Seeded train/validation/test split."""
    perm = np.random.default_rng(seed).permutation(len(frame))
    n_train = int(round(fractions[0] * len(frame)))
    n_val = int(round(fractions[1] * len(frame)))
    parts = (perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :])
    return tuple(frame.iloc[np.sort(p)].reset_index(drop=True) for p in parts)


@dataclass(eq=False)
class BlackbodyReport:
    test_mse: Dict[str, float]
    search: ConstantSearchResult
    reference: Quantity
    models: Dict[str, object] = field(default_factory=dict)
    config: Optional[BlackbodyConfig] = None

    def to_json(self) -> dict:
        return {
            "experiment": "blackbody",
            "config": self.config.to_dict() if self.config else None,
            "test_mse": self.test_mse,
            "constant": {
                **self.search.to_json(),
                "reference": {"name": "c k h^-2", "dimension": format_dimension(self.reference.dim), "magnitude": self.reference.value},
            },
        }


def log_mse(predicted_log: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean((np.asarray(predicted_log) - np.log(np.asarray(target, dtype=float))) ** 2))


def run_blackbody_experiment(
    cfg: BlackbodyConfig, train_cfg: Optional[TrainConfig] = None, search_cfg: Optional[SearchConfig] = None
) -> BlackbodyReport:
    """Train the three regressors and score them by log-intensity MSE on the test split."""
    train_cfg = train_cfg or TrainConfig()
    consts = PhysConstants.from_dict(cfg.constants)
    frame = generate_blackbody(cfg, consts)
    train, val, test = split_frame(frame, cfg.split, cfg.seed)
    logger.info("Blackbody data: %d train / %d val / %d test samples", len(train), len(val), len(test))

    search = search_dimensional_constant(train, INPUTS, TARGET, INTENSITY, train_cfg, search_cfg, val)
    plain: UnitsCovariantModel = search.baseline_model
    if plain is None:
        plain = fit_units_covariant(train, INPUTS, TARGET, INTENSITY, None, train_cfg, val)
    with_constant = search.best_model
    raw_cols = ["wavelength", "temperature"]
    baseline: MLP = train_mlp(
        (train[raw_cols].to_numpy(), np.log(train[TARGET].to_numpy())),
        train_cfg.replace(standardize_inputs=cfg.baseline_standardize),
    )

    test_mse = {
        "units_covariant": log_mse(plain.predict_log(test), test[TARGET]),
        "units_covariant_constant": log_mse(with_constant.predict_log(test), test[TARGET]),
        "mlp": log_mse(baseline.predict_batch(test[raw_cols].to_numpy())[:, 0], test[TARGET]),
    }
    for name, value in test_mse.items():
        logger.info("%s: test log-MSE %.4g", name, value)
    return BlackbodyReport(
        test_mse=test_mse,
        search=search,
        reference=consts.reference_constant(),
        models={"units_covariant": plain, "units_covariant_constant": with_constant, "mlp": baseline},
        config=cfg,
    )
