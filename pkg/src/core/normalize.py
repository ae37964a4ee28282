#!/usr/bin/env python3
"""
Covariant Data Normalization
============================

What this does
--------------
- Groups scalar features into **units classes** (features sharing one exact
  Dimension) and fits one shift/scale pair per class, so a change of units shifts
  and scales every member identically.
- Normalizes each **vector** feature with a mean-vector shift and one common scale,
  the root-mean-square component length ``sqrt(mean((v - mu).(v - mu) / 3))``.
- Normalizes each **tensor** feature with a mean-tensor shift and the mean spectral
  norm of the centered tensors.
- Fits **base-unit scales** (a length scale, a time scale, ...) whose power products
  best match every feature's spread in log space.

Every output is dimensionless; fit-then-apply commutes with global rotations of
the vector/tensor features and with any change of unit convention.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from core.dimensions import Dimension, UnitScaling
from core.errors import EmptyClassError, SchemaMismatchError
from core.geometry import Tensor3, Vec3, spectral_norm_array
from core.schema import FeatureSchema

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UnitsClass:
    """Scalar features sharing one Dimension, with their pooled statistics."""

    dim: Dimension
    members: Tuple[str, ...]
    shift: float
    scale: float


@dataclass(frozen=True, eq=False)
class VectorStats:
    shift: Vec3
    scale: float


@dataclass(frozen=True, eq=False)
class TensorStats:
    shift: Tensor3
    scale: float


@dataclass(frozen=True, eq=False)
class ScaleFit:
    """Base-unit scales and the RMS log-deviation left over."""

    scales: UnitScaling
    residual: float
    spreads: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Normalizer:
    schema: FeatureSchema
    classes: Tuple[UnitsClass, ...]
    vectors: Dict[str, VectorStats]
    tensors: Dict[str, TensorStats]
    unit_scales: Optional[ScaleFit] = None
    warnings: Tuple[str, ...] = ()

    def class_of(self, name: str) -> UnitsClass:
        for cls in self.classes:
            if name in cls.members:
                return cls
        raise SchemaMismatchError(f"{name!r} is not a scalar feature of this normalizer")

    def component_multipliers(self, name: str) -> Tuple[float, ...]:
        """Per-column multiplier applied to a feature's centered values."""
        f = self.schema.feature(name)
        if f.kind == "scalar":
            return (1.0 / self.class_of(name).scale,)
        stats = self.vectors[name] if f.kind == "vector3" else self.tensors[name]
        return tuple(1.0 / stats.scale for _ in f.columns)

    # -- serialization -------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "version": 1,
            "schema": self.schema.to_json(),
            "classes": [
                {"dim": c.dim.to_json(), "members": list(c.members), "shift": c.shift, "scale": c.scale}
                for c in self.classes
            ],
            "vectors": {
                name: {"shift": s.shift.components.tolist(), "scale": s.scale} for name, s in self.vectors.items()
            },
            "tensors": {
                name: {"shift": s.shift.components.tolist(), "scale": s.scale} for name, s in self.tensors.items()
            },
            "unit_scales": None
            if self.unit_scales is None
            else {
                "scales": self.unit_scales.scales.to_json(),
                "residual": self.unit_scales.residual,
                "spreads": dict(self.unit_scales.spreads),
            },
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_json(cls, document: dict) -> "Normalizer":
        schema = FeatureSchema.from_json(document["schema"])
        units = schema.units
        classes = tuple(
            UnitsClass(Dimension.from_mapping(c["dim"], units), tuple(c["members"]), float(c["shift"]), float(c["scale"]))
            for c in document["classes"]
        )
        vectors = {
            name: VectorStats(Vec3(s["shift"], schema.feature(name).dim), float(s["scale"]))
            for name, s in document.get("vectors", {}).items()
        }
        tensors = {
            name: TensorStats(Tensor3(s["shift"], schema.feature(name).dim), float(s["scale"]))
            for name, s in document.get("tensors", {}).items()
        }
        unit_scales = None
        if document.get("unit_scales"):
            us = document["unit_scales"]
            unit_scales = ScaleFit(UnitScaling.from_mapping(us["scales"], units), float(us["residual"]), dict(us.get("spreads", {})))
        return cls(schema, classes, vectors, tensors, unit_scales, tuple(document.get("warnings", [])))

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)

    @classmethod
    def load(cls, path: str) -> "Normalizer":
        if not os.path.exists(path):
            raise FileNotFoundError(f"Normalizer file not found: {path}")
        with open(path, "r") as f:
            return cls.from_json(json.load(f))


def _positive_scale(value: float, label: str, warnings: List[str]) -> float:
    if value > 0.0 and math.isfinite(value):
        return float(value)
    message = f"DegenerateScale: {label} has zero spread, using scale 1"
    logger.warning(message)
    warnings.append(message)
    return 1.0


def _vector_spread(v: np.ndarray, mu: np.ndarray) -> float:
    centered = v - mu
    return math.sqrt(float(np.mean(np.sum(centered**2, axis=1) / 3.0)))


def _tensor_spread(t: np.ndarray, mu: np.ndarray) -> float:
    return float(np.mean([spectral_norm_array(x - mu) for x in t]))


def fit_normalizer(frame: pd.DataFrame, schema: FeatureSchema, fit_unit_scales: bool = True) -> Normalizer:
    """Fit class-pooled scalar statistics and per-feature vector/tensor statistics."""
    schema.check_frame(frame)
    if len(frame) == 0:
        raise EmptyClassError("Cannot fit a normalizer on an empty dataset")
    warnings: List[str] = []

    grouped: Dict[Dimension, List[str]] = {}
    for f in schema.of_kind("scalar"):
        grouped.setdefault(f.dim, []).append(f.name)
    classes = []
    for dim, members in grouped.items():
        values = np.concatenate([schema.feature_array(frame, m) for m in members])
        shift = float(np.mean(values))
        scale = _positive_scale(float(np.std(values)), f"units class {dim} {members}", warnings)
        classes.append(UnitsClass(dim, tuple(members), shift, scale))

    vectors = {}
    for f in schema.of_kind("vector3"):
        v = schema.feature_array(frame, f.name)
        mu = v.mean(axis=0)
        scale = _positive_scale(_vector_spread(v, mu), f"vector {f.name!r}", warnings)
        vectors[f.name] = VectorStats(Vec3(mu, f.dim), scale)

    tensors = {}
    for f in schema.of_kind("tensor3"):
        t = schema.feature_array(frame, f.name)
        mu = t.mean(axis=0)
        scale = _positive_scale(_tensor_spread(t, mu), f"tensor {f.name!r}", warnings)
        tensors[f.name] = TensorStats(Tensor3(mu, f.dim), scale)

    unit_scales = None
    if fit_unit_scales and any(not f.dim.is_dimensionless for f in schema.features):
        unit_scales = fit_base_unit_scales(frame, schema)

    logger.info(
        "Fitted normalizer: %d units classes, %d vectors, %d tensors",
        len(classes),
        len(vectors),
        len(tensors),
    )
    return Normalizer(schema, tuple(classes), vectors, tensors, unit_scales, tuple(warnings))


def apply_normalizer(n: Normalizer, frame: pd.DataFrame) -> pd.DataFrame:
    """Dimensionless copy of the schema columns; other columns pass through."""
    try:
        n.schema.check_frame(frame)
    except SchemaMismatchError as e:
        raise SchemaMismatchError(f"Data does not match the normalizer's schema: {e}") from e
    out = frame.copy()
    for f in n.schema.features:
        values = n.schema.feature_array(frame, f.name)
        if f.kind == "scalar":
            cls = n.class_of(f.name)
            normalized = (values - cls.shift) / cls.scale
            out[f.columns[0]] = normalized
            continue
        stats = n.vectors[f.name] if f.kind == "vector3" else n.tensors[f.name]
        normalized = ((values - stats.shift.components) / stats.scale).reshape(len(frame), -1)
        for j, c in enumerate(f.columns):
            out[c] = normalized[:, j]
    return out


def feature_spreads(frame: pd.DataFrame, schema: FeatureSchema) -> Dict[str, float]:
    """Raw spread of every feature: root-variance, vector scale or tensor spectral scale."""
    spreads = {}
    for f in schema.features:
        values = schema.feature_array(frame, f.name)
        if f.kind == "scalar":
            spreads[f.name] = float(np.std(values))
        elif f.kind == "vector3":
            spreads[f.name] = _vector_spread(values, values.mean(axis=0))
        else:
            spreads[f.name] = _tensor_spread(values, values.mean(axis=0))
    return spreads


def fit_base_unit_scales(frame: pd.DataFrame, schema: FeatureSchema) -> ScaleFit:
    """
    Least-squares fit of log base-unit scales S_u to feature spreads:
    minimize sum_j (log sigma_j - sum_u a_ju log S_u)^2, minimum-norm on rank deficiency.
    """
    spreads = feature_spreads(frame, schema)
    used = [f for f in schema.features if spreads[f.name] > 0.0]
    skipped = [f.name for f in schema.features if spreads[f.name] <= 0.0]
    if skipped:
        logger.warning("Skipping zero-spread features in unit-scale fit: %s", skipped)
    n_units = len(schema.units)
    if not used:
        return ScaleFit(UnitScaling.identity(schema.units), 0.0, spreads)

    a = np.array([[float(e) for e in f.dim.exponents] for f in used], dtype=float)
    b = np.array([math.log(spreads[f.name]) for f in used])
    if np.any(a != 0.0):
        x, *_ = np.linalg.lstsq(a, b, rcond=None)
    else:
        x = np.zeros(n_units)
    residual = math.sqrt(float(np.mean((b - a @ x) ** 2)))
    scales = UnitScaling(tuple(math.exp(v) for v in x), schema.units)
    logger.info("Fitted base-unit scales %s (residual %.3g)", scales.to_json(), residual)
    return ScaleFit(scales, residual, spreads)
