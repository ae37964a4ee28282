"""
Report writers: JSON with floats fixed at 17 significant digits, CSV tables.

Same report object in, same bytes out.
"""

import dataclasses
import json
import logging
import math
import os
from fractions import Fraction
from typing import Any

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def format_float(value: float) -> str:
    """17 significant digits; non-finite values become null."""
    if not math.isfinite(value):
        return "null"
    text = FLOAT_FORMAT % value
    if not any(ch in text for ch in ".en"):
        text += ".0"
    return text


def to_plain(obj: Any) -> Any:
    """Convert numpy, pandas, Fraction and dataclass values into JSON-ready Python objects."""
    if hasattr(obj, "to_json") and not isinstance(obj, (pd.DataFrame, pd.Series)):
        return to_plain(obj.to_json())
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, pd.DataFrame):
        return to_plain(obj.to_dict(orient="list"))
    if isinstance(obj, pd.Series):
        return to_plain(obj.tolist())
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, Fraction):
        return str(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_plain(dataclasses.asdict(obj))
    return obj


INDENT = "  "


def _encode(value: Any, level: int) -> str:
    """Indented, key-sorted JSON text; floats go through format_float."""
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, dict):
        if not value:
            return "{}"
        pad = INDENT * (level + 1)
        items = [f"{pad}{json.dumps(k)}: {_encode(value[k], level + 1)}" for k in sorted(value)]
        return "{\n" + ",\n".join(items) + "\n" + INDENT * level + "}"
    if isinstance(value, list):
        if not value:
            return "[]"
        pad = INDENT * (level + 1)
        items = [pad + _encode(v, level + 1) for v in value]
        return "[\n" + ",\n".join(items) + "\n" + INDENT * level + "]"
    return json.dumps(value)


def dumps_report(obj: Any) -> str:
    return _encode(to_plain(obj), 0) + "\n"


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_json(obj: Any, path: str) -> str:
    """Write a report as JSON and return the path."""
    _ensure_parent(path)
    with open(path, "w", newline="\n") as f:
        f.write(dumps_report(obj))
    logger.info("Wrote %s", path)
    return path


def read_json(path: str) -> Any:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Missing file: {path}")
    with open(path, "r") as f:
        return json.load(f)


def write_csv(frame: pd.DataFrame, path: str) -> str:
    """Write a table as CSV with the same float precision as the JSON reports."""
    _ensure_parent(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("Wrote %s", path)
    return path


def sibling_path(path: str, suffix: str) -> str:
    """report.json + '_scores.csv' -> report_scores.csv"""
    root, _ = os.path.splitext(path)
    return root + suffix
