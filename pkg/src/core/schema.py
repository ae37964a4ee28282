#!/usr/bin/env python3
"""
Feature schemas: which data columns form which scalar / vector / tensor feature,
and the Dimension of each feature.

Vectors default to columns ``name.x, name.y, name.z`` and tensors to
``name.xx ... name.zz``. Schema files are validated against
``schemas/feature_schema.json`` with jsonschema.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import jsonschema
import numpy as np
import pandas as pd

from core.dimensions import BASE_UNITS, Dimension, parse_units
from core.errors import SchemaMismatchError

logger = logging.getLogger(__name__)

SCHEMA_DIR = os.path.join(os.path.dirname(__file__), "schemas")

KINDS = ("scalar", "vector3", "tensor3")
VECTOR_SUFFIXES = ("x", "y", "z")
TENSOR_SUFFIXES = tuple(a + b for a in VECTOR_SUFFIXES for b in VECTOR_SUFFIXES)
COLUMN_COUNT = {"scalar": 1, "vector3": 3, "tensor3": 9}

RecordValue = Union[float, np.ndarray]
Record = Dict[str, RecordValue]


def load_json_schema(name: str) -> dict:
    """Load one of the bundled JSON-schema documents."""
    with open(os.path.join(SCHEMA_DIR, name), "r") as f:
        return json.load(f)


def validate_document(document: dict, schema_name: str) -> None:
    """Raise SchemaMismatchError when the document violates the bundled JSON schema."""
    try:
        jsonschema.validate(instance=document, schema=load_json_schema(schema_name))
    except jsonschema.exceptions.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise SchemaMismatchError(f"{schema_name}: {e.message} (at {path})") from e


def parse_dimension_field(value, units: Sequence[str] = BASE_UNITS) -> Dimension:
    """Accept either a unit string ('m/s^2') or a JSON exponent object."""
    if value is None:
        return Dimension.dimensionless(units)
    if isinstance(value, str):
        return parse_units(value, units)
    return Dimension.from_mapping(value, units)


def default_columns(name: str, kind: str) -> Tuple[str, ...]:
    if kind == "scalar":
        return (name,)
    suffixes = VECTOR_SUFFIXES if kind == "vector3" else TENSOR_SUFFIXES
    return tuple(f"{name}.{s}" for s in suffixes)


@dataclass(frozen=True)
class FeatureEntry:
    name: str
    kind: str
    dim: Dimension
    columns: Tuple[str, ...]

    @property
    def is_geometric(self) -> bool:
        return self.kind != "scalar"


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature entries plus the column-to-feature mapping."""

    features: Tuple[FeatureEntry, ...]
    units: Tuple[str, ...] = BASE_UNITS

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaMismatchError(f"Feature names must be unique: {names}")
        seen = set()
        for f in self.features:
            if f.kind not in KINDS:
                raise SchemaMismatchError(f"Feature {f.name!r} has unknown kind {f.kind!r}")
            if len(f.columns) != COLUMN_COUNT[f.kind]:
                raise SchemaMismatchError(
                    f"Feature {f.name!r} ({f.kind}) maps {len(f.columns)} columns, "
                    f"expected {COLUMN_COUNT[f.kind]}"
                )
            if f.dim.units != self.units:
                raise SchemaMismatchError(f"Feature {f.name!r} uses base units {f.dim.units}")
            for c in f.columns:
                if c in seen:
                    raise SchemaMismatchError(f"Column {c!r} is mapped twice")
                seen.add(c)

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, entries: Iterable[Tuple[str, str, Dimension]], units: Sequence[str] = BASE_UNITS) -> "FeatureSchema":
        """Build from (name, kind, dim) triples with default column names."""
        return cls(
            tuple(FeatureEntry(n, k, d, default_columns(n, k)) for n, k, d in entries),
            tuple(units),
        )

    @classmethod
    def from_json(cls, document: dict) -> "FeatureSchema":
        validate_document(document, "feature_schema.json")
        units = tuple(document.get("base_units", BASE_UNITS))
        entries = []
        for item in document["features"]:
            kind = item["kind"]
            columns = tuple(item.get("columns") or default_columns(item["name"], kind))
            entries.append(FeatureEntry(item["name"], kind, parse_dimension_field(item.get("dim"), units), columns))
        return cls(tuple(entries), units)

    @classmethod
    def load(cls, path: str) -> "FeatureSchema":
        if not os.path.exists(path):
            raise FileNotFoundError(f"Schema file not found: {path}")
        with open(path, "r") as f:
            return cls.from_json(json.load(f))

    def to_json(self) -> dict:
        return {
            "version": 1,
            "base_units": list(self.units),
            "features": [
                {"name": f.name, "kind": f.kind, "dim": f.dim.to_json(), "columns": list(f.columns)}
                for f in self.features
            ],
        }

    # -- lookups --------------------------------------------------------------

    @property
    def names(self) -> List[str]:
        return [f.name for f in self.features]

    @property
    def columns(self) -> List[str]:
        return [c for f in self.features for c in f.columns]

    def feature(self, name: str) -> FeatureEntry:
        for f in self.features:
            if f.name == name:
                return f
        raise SchemaMismatchError(f"Unknown feature {name!r}; schema has {self.names}")

    def owner_of(self, column: str) -> FeatureEntry:
        """Feature that a column belongs to."""
        for f in self.features:
            if column in f.columns:
                return f
        raise SchemaMismatchError(f"Column {column!r} is not declared in the schema")

    def of_kind(self, kind: str) -> List[FeatureEntry]:
        return [f for f in self.features if f.kind == kind]

    # -- data access ------------------------------------------------------------

    def check_frame(self, frame: pd.DataFrame) -> None:
        missing = [c for c in self.columns if c not in frame.columns]
        if missing:
            raise SchemaMismatchError(f"Data is missing schema columns: {missing}")

    def feature_array(self, frame: pd.DataFrame, name: str) -> np.ndarray:
        """(n,), (n, 3) or (n, 3, 3) array of one feature's values."""
        f = self.feature(name)
        values = frame[list(f.columns)].to_numpy(dtype=float)
        if f.kind == "scalar":
            return values[:, 0]
        if f.kind == "vector3":
            return values
        return values.reshape(-1, 3, 3)

    def records_from_frame(self, frame: pd.DataFrame) -> List[Record]:
        self.check_frame(frame)
        arrays = {f.name: self.feature_array(frame, f.name) for f in self.features}
        return [
            {name: (float(arr[i]) if arr.ndim == 1 else arr[i].copy()) for name, arr in arrays.items()}
            for i in range(len(frame))
        ]

    def frame_from_arrays(self, arrays: Dict[str, np.ndarray]) -> pd.DataFrame:
        """Inverse of feature_array over all features."""
        data = {}
        for f in self.features:
            arr = np.asarray(arrays[f.name], dtype=float)
            flat = arr.reshape(arr.shape[0], -1) if f.kind != "scalar" else arr.reshape(-1, 1)
            for j, c in enumerate(f.columns):
                data[c] = flat[:, j]
        return pd.DataFrame(data, columns=self.columns)
