#!/usr/bin/env python3
"""
Symmetry Auditing
=================

What this does
--------------
- **Lints** declarative pipeline descriptions against a feature schema and reports
  operations that break units covariance or rotation covariance (rules R1-R7).
- **Tests covariance** of any black-box function over schema-typed records: sample
  group elements (orthogonal matrices, axial rotations or unit rescalings), transform
  the inputs, and compare f(g.x) against the transformed f(x).

Rule catalog
------------
R1  PCA over columns with different units
R2  kernel exponentiates or mixes dimensional inputs
R3  nonlinearity applied to vector or tensor components
R4  non-homogeneous nonlinearity applied to a dimensional scalar
R5  norm over mixed units, or L1/Linf over vector/tensor components
R6  per-component normalization of a vector or tensor
R7  loss adds terms with different units
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.dimensions import Dimension, UnitScaling, format_dimension
from core.errors import ConfigError, SchemaMismatchError
from core.geometry import (
    Orthogonal3,
    Vec3,
    apply_to_tensors,
    axial_orthogonal,
    equivariant_combination,
    gram_matrix,
    haar_orthogonal,
)
from core.mlp import MLP
from core.model import DynamicsModel, UnitsCovariantModel
from core.schema import FeatureSchema, Record, parse_dimension_field, validate_document

logger = logging.getLogger(__name__)

RULES = {
    "R1": "PCA over mixed units",
    "R2": "kernel exponentiates dimensional input",
    "R3": "nonlinearity on vector/tensor components",
    "R4": "non-homogeneous nonlinearity on dimensional scalar",
    "R5": "norm over mixed units or geometric components",
    "R6": "per-component vector normalization",
    "R7": "loss sums terms of different units",
}
SEVERITIES = ("error", "warning")
HOMOGENEOUS = {"relu", "leaky_relu", "identity", "linear", "abs", "monomial"}


# ===============================
# 1) PIPELINE LINT
# ===============================


@dataclass(frozen=True)
class PipelineStep:
    op: str
    params: Mapping[str, object]

    def get(self, key: str, default=None):
        return self.params.get(key, default)


@dataclass(frozen=True)
class PipelineDesc:
    steps: Tuple[PipelineStep, ...]

    @classmethod
    def from_json(cls, document: dict) -> "PipelineDesc":
        validate_document(document, "pipeline.json")
        return cls(tuple(PipelineStep(s["op"], {k: v for k, v in s.items() if k != "op"}) for s in document["steps"]))

    @classmethod
    def load(cls, path: str) -> "PipelineDesc":
        if not os.path.exists(path):
            raise FileNotFoundError(f"Pipeline file not found: {path}")
        with open(path, "r") as f:
            return cls.from_json(json.load(f))


@dataclass(frozen=True)
class Diagnostic:
    rule: str
    severity: str
    message: str
    columns: Tuple[str, ...] = ()
    step: int = -1

    def __post_init__(self):
        if self.rule not in RULES:
            raise ConfigError(f"Unknown lint rule {self.rule!r}")
        if self.severity not in SEVERITIES:
            raise ConfigError(f"Unknown severity {self.severity!r}")

    def to_json(self) -> dict:
        return {
            "rule": self.rule,
            "severity": self.severity,
            "step": self.step,
            "message": self.message,
            "columns": list(self.columns),
        }


def _resolve(schema: FeatureSchema, names: Sequence[str]) -> List[str]:
    """Expand feature names to their columns; plain column names pass through."""
    columns: List[str] = []
    for name in names:
        if name in schema.names:
            columns.extend(schema.feature(name).columns)
        else:
            schema.owner_of(name)
            columns.append(name)
    return columns


def _dims(schema: FeatureSchema, columns: Sequence[str]) -> List[Dimension]:
    seen: List[Dimension] = []
    for c in columns:
        d = schema.owner_of(c).dim
        if d not in seen:
            seen.append(d)
    return seen


def _geometric(schema: FeatureSchema, columns: Sequence[str]) -> List[str]:
    return [c for c in columns if schema.owner_of(c).is_geometric]


def _dim_list(dims: Sequence[Dimension]) -> str:
    return ", ".join(format_dimension(d) for d in dims)


def _lint_step(schema: FeatureSchema, step: PipelineStep, i: int) -> List[Diagnostic]:
    out: List[Diagnostic] = []
    columns = _resolve(schema, step.get("columns", []))
    dims = _dims(schema, columns)
    cols = tuple(columns)

    if step.op == "pca" and len(dims) > 1:
        out.append(Diagnostic("R1", "error", f"PCA over mixed units ({_dim_list(dims)}) depends on the unit system", cols, i))

    elif step.op == "kernel":
        kind = step.get("type", "rbf")
        if kind == "product":
            for group in step.get("factors", []):
                group_cols = _resolve(schema, group)
                group_dims = _dims(schema, group_cols)
                if len(group_dims) > 1:
                    out.append(Diagnostic("R2", "error", f"Kernel factor mixes units ({_dim_list(group_dims)})", tuple(group_cols), i))
        elif len(dims) > 1:
            out.append(Diagnostic("R2", "error", f"{kind} kernel combines mixed units ({_dim_list(dims)})", cols, i))
        elif dims and not dims[0].is_dimensionless:
            if kind == "rbf":
                scale = step.get("length_scale_dim")
                if scale is None or parse_dimension_field(scale, schema.units) != dims[0]:
                    out.append(
                        Diagnostic("R2", "error", f"rbf kernel exponentiates inputs with units {format_dimension(dims[0])}; "
                                   "give a length scale with the same units", cols, i)
                    )
            else:
                out.append(
                    Diagnostic("R2", "warning", f"poly kernel offset must carry units ({format_dimension(dims[0])})^2", cols, i)
                )

    elif step.op == "nonlinearity":
        name = str(step.get("name", ""))
        geometric = _geometric(schema, columns)
        if geometric:
            out.append(Diagnostic("R3", "error", f"Nonlinearity {name!r} applied to vector/tensor components", tuple(geometric), i))
        homogeneous = step.get("homogeneous", name.lower() in HOMOGENEOUS)
        dimensional = [c for c in columns if c not in geometric and not schema.owner_of(c).dim.is_dimensionless]
        if dimensional and not homogeneous:
            out.append(
                Diagnostic("R4", "error", f"Non-homogeneous nonlinearity {name!r} applied to dimensional scalars", tuple(dimensional), i)
            )

    elif step.op == "norm":
        kind = step.get("type", "l2")
        if len(dims) > 1:
            out.append(Diagnostic("R5", "error", f"{kind} norm over mixed units ({_dim_list(dims)})", cols, i))
        geometric = _geometric(schema, columns)
        if kind in ("l1", "linf") and geometric:
            out.append(Diagnostic("R5", "error", f"{kind} norm over vector/tensor components is not rotation-invariant", tuple(geometric), i))

    elif step.op == "normalize" and step.get("per_component", False):
        geometric = _geometric(schema, columns)
        if geometric:
            out.append(Diagnostic("R6", "error", "Vector/tensor components must share one scale", tuple(geometric), i))

    elif step.op == "loss":
        terms = step.get("terms", [])
        term_dims: Dict[Dimension, List[str]] = {}
        for t in terms:
            term_dims.setdefault(parse_dimension_field(t["dim"], schema.units), []).append(t["name"])
        if len(term_dims) > 1:
            out.append(
                Diagnostic("R7", "error", f"Loss adds terms with different units ({_dim_list(list(term_dims))})",
                           tuple(t["name"] for t in terms), i)
            )

    return out


def lint_pipeline(schema: FeatureSchema, pipe: PipelineDesc) -> List[Diagnostic]:
    """Diagnostics ordered by pipeline position, then rule id."""
    diagnostics: List[Diagnostic] = []
    for i, step in enumerate(pipe.steps):
        try:
            found = _lint_step(schema, step, i)
        except SchemaMismatchError as e:
            raise SchemaMismatchError(f"Pipeline step {i} ({step.op}): {e}") from e
        diagnostics.extend(sorted(found, key=lambda d: d.rule))
    logger.info("Lint: %d diagnostics over %d steps", len(diagnostics), len(pipe.steps))
    return diagnostics


# ===============================
# 2) COVARIANCE HARNESS
# ===============================

GROUPS = ("O3", "O3-proper", "UnitsRescaling", "O2Axis")
EPSILON = 1e-30

GroupElement = Union[Orthogonal3, UnitScaling]
RecordFn = Callable[[Record], object]


@dataclass(frozen=True)
class CovarianceTestSpec:
    """
    ``transform`` limits which input features move with the group element (default
    all). A function returning a bare value has output ``output_kind``/``output_dim``.
    """

    group: str = "O3"
    trials: int = 32
    seed: int = 0
    tolerance: float = 1e-10
    transform: Optional[Tuple[str, ...]] = None
    output_kind: str = "scalar"
    output_dim: Optional[Dimension] = None
    axis: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    log_scale_range: float = 3.0

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ConfigError(f"Unknown group {self.group!r}; use one of {GROUPS}")
        if self.trials < 1:
            raise ConfigError(f"trials must be at least 1, got {self.trials}")
        if not self.tolerance > 0:
            raise ConfigError(f"tolerance must be positive, got {self.tolerance}")


@dataclass(frozen=True)
class CovarianceReport:
    group: str
    tolerance: float
    deviations: Tuple[float, ...]
    self_check_deviation: float

    @property
    def max_deviation(self) -> float:
        return max(self.deviations)

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance

    @property
    def self_check_passed(self) -> bool:
        return self.self_check_deviation <= self.tolerance

    def to_json(self) -> dict:
        return {
            "group": self.group,
            "tolerance": self.tolerance,
            "trials": len(self.deviations),
            "max_deviation": self.max_deviation,
            "passed": self.passed,
            "self_check": {"deviation": self.self_check_deviation, "passed": self.self_check_passed},
            "deviations": list(self.deviations),
        }


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(trial)]).generate_state(1)[0])


def sample_element(spec: CovarianceTestSpec, trial: int, units: Sequence[str]) -> GroupElement:
    s = trial_seed(spec.seed, trial)
    if spec.group == "O3":
        return haar_orthogonal(s)
    if spec.group == "O3-proper":
        return haar_orthogonal(s, proper_only=True)
    if spec.group == "O2Axis":
        return axial_orthogonal(spec.axis, s)
    rng = np.random.default_rng(s)
    r = spec.log_scale_range
    return UnitScaling(tuple(np.exp(rng.uniform(-r, r, len(units)))), tuple(units))


def transform_record(record: Record, schema: FeatureSchema, element: GroupElement, only: Optional[Sequence[str]] = None) -> Record:
    """Apply a group element to every (selected) feature of a record."""
    out = dict(record)
    for f in schema.features:
        if f.name not in record or (only is not None and f.name not in only):
            continue
        value = record[f.name]
        if isinstance(element, UnitScaling):
            out[f.name] = np.asarray(value, dtype=float) * element.factor(f.dim) if f.is_geometric else float(value) * element.factor(f.dim)
        elif f.kind == "vector3":
            out[f.name] = element.matrix @ np.asarray(value, dtype=float)
        elif f.kind == "tensor3":
            out[f.name] = apply_to_tensors(element.matrix, np.asarray(value, dtype=float).reshape(3, 3))
    return out


def _as_output(value, spec: CovarianceTestSpec, units: Sequence[str]) -> Tuple[Record, FeatureSchema]:
    """Wrap a bare return value as a one-feature record."""
    dim = spec.output_dim or Dimension.dimensionless(units)
    schema = FeatureSchema.build([("output", spec.output_kind, dim)], units)
    return {"output": value}, schema


def _flatten(record: Record, schema: FeatureSchema) -> np.ndarray:
    return np.concatenate([np.atleast_1d(np.asarray(record[f.name], dtype=float)).ravel() for f in schema.features])


def relative_deviation(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / (np.linalg.norm(a) + np.linalg.norm(b) + EPSILON))


def _deviation(
    fn: RecordFn,
    spec: CovarianceTestSpec,
    schema: FeatureSchema,
    probes: Sequence[Record],
    element: GroupElement,
    output_schema: Optional[FeatureSchema],
) -> float:
    worst = 0.0
    for x in probes:
        y = fn(x)
        y_moved = fn(transform_record(x, schema, element, spec.transform))
        if output_schema is None:
            y, out_schema = _as_output(y, spec, schema.units)
            y_moved, _ = _as_output(y_moved, spec, schema.units)
        else:
            out_schema = output_schema
        expected = transform_record(y, out_schema, element)
        worst = max(worst, relative_deviation(_flatten(y_moved, out_schema), _flatten(expected, out_schema)))
    return worst


def equivariant_fixture(group: str, units: Sequence[str]) -> Tuple[RecordFn, FeatureSchema, FeatureSchema, List[Record]]:
    """A function covariant by construction, used to check the harness itself."""
    if group == "UnitsRescaling":
        length, time = Dimension.from_mapping({"m": 1}, units), Dimension.from_mapping({"s": 1}, units)
        schema = FeatureSchema.build([("x", "scalar", length), ("t", "scalar", time)], units)
        out = FeatureSchema.build([("y", "scalar", length**2 / time)], units)

        def fn(r: Record) -> Record:
            return {"y": float(r["x"]) ** 2 / float(r["t"])}

    else:
        schema = FeatureSchema.build([("a", "vector3", Dimension.dimensionless(units)), ("b", "vector3", Dimension.dimensionless(units))], units)
        out = FeatureSchema.build([("y", "vector3", Dimension.dimensionless(units))], units)

        def fn(r: Record) -> Record:
            a, b = Vec3(r["a"]), Vec3(r["b"])
            g = gram_matrix(np.stack([a.components, b.components]))
            coeffs = (math.tanh(g[0, 1]), g[0, 0] - 0.5 * g[1, 1])
            return {"y": equivariant_combination(coeffs, [a, b]).components}

    rng = np.random.default_rng(12345)
    probes = [
        {f.name: (float(np.exp(rng.standard_normal())) if f.kind == "scalar" else rng.standard_normal(3)) for f in schema.features}
        for _ in range(4)
    ]
    return fn, schema, out, probes


def test_covariance(
    fn: RecordFn,
    spec: CovarianceTestSpec,
    schema: FeatureSchema,
    probes: Sequence[Record],
    output_schema: Optional[FeatureSchema] = None,
    elements: Optional[Sequence[GroupElement]] = None,
) -> CovarianceReport:
    """
    Max over probes of ||f(g.x) - rho(g) f(x)|| / (||f(g.x)|| + ||rho(g) f(x)|| + eps),
    per trial. ``elements`` replaces the sampled group elements.

    Failures are report content; the harness also re-runs its own covariant fixture
    on the same elements.
    """
    if not probes:
        raise SchemaMismatchError("test_covariance needs at least one probe record")
    for x in probes:
        missing = [n for n in schema.names if n not in x]
        if missing:
            raise SchemaMismatchError(f"Probe record is missing features {missing}")
    units = schema.units
    if elements is None:
        elements = [sample_element(spec, t, units) for t in range(spec.trials)]
    deviations = tuple(_deviation(fn, spec, schema, probes, g, output_schema) for g in elements)

    fix_fn, fix_schema, fix_out, fix_probes = equivariant_fixture(spec.group, units)
    fix_spec = CovarianceTestSpec(spec.group, spec.trials, spec.seed, spec.tolerance, axis=spec.axis)
    self_check = max(_deviation(fix_fn, fix_spec, fix_schema, fix_probes, g, fix_out) for g in elements)
    report = CovarianceReport(spec.group, spec.tolerance, deviations, self_check)
    if not report.self_check_passed:
        logger.warning("Covariance harness self-check failed (deviation %.3g)", self_check)
    logger.info("Covariance test %s: max deviation %.3g over %d trials", spec.group, report.max_deviation, len(deviations))
    return report


# ===============================
# 3) MODELS AS RECORD FUNCTIONS
# ===============================


def _mlp_function(net: MLP, schema: FeatureSchema) -> RecordFn:
    def fn(record: Record):
        x = np.concatenate([np.atleast_1d(np.asarray(record[f.name], dtype=float)).ravel() for f in schema.features])
        out = net.predict_batch(x[None])[0]
        return float(out[0]) if len(out) == 1 else out

    return fn


def model_function(
    model, schema: Optional[FeatureSchema] = None, output_dim: Optional[Dimension] = None
) -> Tuple[RecordFn, FeatureSchema, FeatureSchema, Record]:
    """
    (function, input schema, output schema, default feature values) for a saved model.

    Plain MLPs read the schema's columns in order and need ``schema``.
    """
    if isinstance(model, UnitsCovariantModel):
        defaults = {model.constant.name: model.constant.magnitude} if model.constant else {}
        out = FeatureSchema.build([(model.target_name, "scalar", model.target_dim)], model.target_dim.units)
        return (lambda r: {model.target_name: model.predict_record(r)}), model.feature_schema(), out, defaults
    if isinstance(model, DynamicsModel):
        defaults = {"q0": model.q0}
        if model.hidden_name:
            defaults[model.hidden_name] = np.asarray(model.hidden, dtype=float)
        return model.predict_record, model.feature_schema(), model.output_schema(), defaults
    if isinstance(model, MLP):
        if schema is None:
            raise SchemaMismatchError("A plain MLP needs a feature schema to read its inputs")
        if len(schema.columns) != model.n_inputs:
            raise SchemaMismatchError(f"Schema has {len(schema.columns)} columns but the MLP takes {model.n_inputs}")
        kind = {1: "scalar", 3: "vector3", 9: "tensor3"}.get(model.n_outputs)
        if kind is None:
            raise SchemaMismatchError(f"Cannot interpret an MLP output of width {model.n_outputs}")
        dim = output_dim or Dimension.dimensionless(schema.units)
        out = FeatureSchema.build([("output", kind, dim)], schema.units)
        fn = _mlp_function(model, schema)

        def wrapped(r: Record) -> Record:
            value = fn(r)
            if kind == "tensor3":
                value = np.asarray(value).reshape(3, 3)
            return {"output": value}

        return wrapped, schema, out, {}
    raise ConfigError(f"Unsupported model type {type(model).__name__}")


def random_probes(schema: FeatureSchema, n: int, seed: int, defaults: Optional[Record] = None) -> List[Record]:
    """Seeded probe records: positive log-normal scalars, Gaussian vectors and tensors."""
    rng = np.random.default_rng(seed)
    defaults = defaults or {}
    probes = []
    for _ in range(n):
        record: Record = {}
        for f in schema.features:
            if f.name in defaults:
                record[f.name] = defaults[f.name]
            elif f.kind == "scalar":
                record[f.name] = float(np.exp(rng.standard_normal()))
            elif f.kind == "vector3":
                record[f.name] = rng.standard_normal(3)
            else:
                record[f.name] = rng.standard_normal((3, 3))
        probes.append(record)
    return probes


def probes_from_frame(frame: pd.DataFrame, schema: FeatureSchema, defaults: Optional[Record] = None, limit: int = 16) -> List[Record]:
    """Probe records from data rows; features absent from the data take their defaults."""
    defaults = defaults or {}
    present = FeatureSchema(tuple(f for f in schema.features if all(c in frame.columns for c in f.columns)), schema.units)
    records = present.records_from_frame(frame.head(limit))
    for r in records:
        for name, value in defaults.items():
            r.setdefault(name, value)
    missing = [n for n in schema.names if records and n not in records[0]]
    if missing:
        raise SchemaMismatchError(f"Data has no columns for features {missing} and no defaults exist")
    return records


# not a pytest test
test_covariance.__test__ = False  # type: ignore[attr-defined]
