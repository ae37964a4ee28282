#!/usr/bin/env python3
"""
Dimensions and Dimensional Analysis
===================================

What this does
--------------
- Represents the **units behavior** of a quantity as an exact rational exponent
  tuple over ordered base units (default ``kg, m, s, K``).
- Rescales numerical values between unit conventions (``UnitScaling``).
- Solves for the **dimensionally valid power products** of a set of inputs that
  carry a target Dimension, plus the basis of all **dimensionless (Pi) products**,
  by exact rational Gaussian elimination.

Exponents are ``fractions.Fraction`` so that square roots (exponent 1/2) and
nullspace computations stay exact.

JSON form of a Dimension: ``{"kg": "1", "m": "-1/2", ...}``; omitted keys are zero.
"""

from __future__ import annotations

import itertools
import logging
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from core.errors import DimensionError, InfeasibleError, SymmetryLabError

logger = logging.getLogger(__name__)

BASE_UNITS: Tuple[str, ...] = ("kg", "m", "s", "K")

RationalLike = Union[Fraction, int, str]


def to_rational(value: RationalLike) -> Fraction:
    """Convert ints, Fractions and strings like '-1/2' to a Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise DimensionError(f"Not a rational exponent: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip().strip("()").replace(" ", ""))
        except (ValueError, ZeroDivisionError) as e:
            raise DimensionError(f"Not a rational exponent: {value!r}") from e
    if isinstance(value, float) and value.is_integer():
        return Fraction(int(value))
    raise DimensionError(f"Not a rational exponent: {value!r}")


def format_rational(value: Fraction) -> str:
    """'p' for integers, 'p/q' otherwise."""
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


# -------------------------------
# 1) DIMENSION ALGEBRA
# -------------------------------


@dataclass(frozen=True)
class Dimension:
    """Exact exponent tuple, one entry per base unit."""

    exponents: Tuple[Fraction, ...]
    units: Tuple[str, ...] = BASE_UNITS

    def __post_init__(self):
        exps = tuple(to_rational(e) for e in self.exponents)
        if len(exps) != len(self.units):
            raise DimensionError(
                f"Dimension needs {len(self.units)} exponents for units {self.units}, "
                f"got {len(exps)}"
            )
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "units", tuple(self.units))

    @classmethod
    def dimensionless(cls, units: Sequence[str] = BASE_UNITS) -> "Dimension":
        return cls(tuple(Fraction(0) for _ in units), tuple(units))

    @classmethod
    def from_mapping(
        cls, mapping: Dict[str, RationalLike], units: Sequence[str] = BASE_UNITS
    ) -> "Dimension":
        unknown = set(mapping) - set(units)
        if unknown:
            raise DimensionError(f"Unknown base units {sorted(unknown)}; known: {list(units)}")
        return cls(tuple(to_rational(mapping.get(u, 0)) for u in units), tuple(units))

    def to_json(self) -> Dict[str, str]:
        return {u: format_rational(e) for u, e in zip(self.units, self.exponents)}

    @property
    def is_dimensionless(self) -> bool:
        return all(e == 0 for e in self.exponents)

    def exponent(self, unit: str) -> Fraction:
        return self.exponents[self.units.index(unit)]

    def __mul__(self, other: "Dimension") -> "Dimension":
        return dim_mul(self, other)

    def __truediv__(self, other: "Dimension") -> "Dimension":
        return dim_mul(self, dim_pow(other, Fraction(-1)))

    def __pow__(self, power: RationalLike) -> "Dimension":
        return dim_pow(self, to_rational(power))

    def __str__(self) -> str:
        return format_dimension(self)


def _check_same_units(a: Dimension, b: Dimension) -> None:
    if a.units != b.units:
        raise DimensionError(f"Base units differ: {a.units} vs {b.units}")


def dim_mul(a: Dimension, b: Dimension) -> Dimension:
    """Elementwise exponent sum."""
    _check_same_units(a, b)
    return Dimension(tuple(x + y for x, y in zip(a.exponents, b.exponents)), a.units)


def dim_pow(a: Dimension, r: RationalLike) -> Dimension:
    """Exponents scaled by r."""
    r = to_rational(r)
    return Dimension(tuple(x * r for x in a.exponents), a.units)


def combine_dimensions(dims: Sequence[Dimension], exponents: Sequence[RationalLike]) -> Dimension:
    """Dimension of the power product prod_i dims[i]**exponents[i]."""
    if len(dims) != len(exponents):
        raise DimensionError("combine_dimensions needs one exponent per Dimension")
    if not dims:
        return Dimension.dimensionless()
    out = Dimension.dimensionless(dims[0].units)
    for d, e in zip(dims, exponents):
        out = dim_mul(out, dim_pow(d, e))
    return out


def format_dimension(dim: Dimension) -> str:
    """'kg m^2 s^-2 K^-1'; '1' when dimensionless."""
    parts = []
    for unit, e in zip(dim.units, dim.exponents):
        if e == 0:
            continue
        if e == 1:
            parts.append(unit)
        elif e.denominator == 1:
            parts.append(f"{unit}^{e.numerator}")
        else:
            parts.append(f"{unit}^({format_rational(e)})")
    return " ".join(parts) if parts else "1"


def format_power_product(names: Sequence[str], exponents: Sequence[Fraction]) -> str:
    """Monomial such as 'g^(-1/2) h^(1/2)'; '1' for the empty product."""
    parts = []
    for name, e in zip(names, exponents):
        if e == 0:
            continue
        if e == 1:
            parts.append(name)
        else:
            parts.append(f"{name}^({format_rational(e)})")
    return " ".join(parts) if parts else "1"


_FACTOR = re.compile(
    r"\s*([*/·]?)\s*([A-Za-z]+|1)\s*"
    r"(?:\^\s*(\(\s*-?\d+\s*(?:/\s*\d+\s*)?\)|-?\d+))?"
)


def parse_units(text: str, units: Sequence[str] = BASE_UNITS) -> Dimension:
    """
    Parse a unit string into a Dimension.

    Grammar: factors ``unit[^exp]`` joined by ``*``, ``·``, whitespace or ``/``;
    ``/`` divides only the factor that follows it. Exponents are integers or
    parenthesized rationals, e.g. ``kg*m^2/s^2/K`` or ``m^(1/2)``.
    """
    text = text.strip()
    if text in ("", "1", "dimensionless"):
        return Dimension.dimensionless(units)

    exps = {u: Fraction(0) for u in units}
    pos = 0
    while pos < len(text):
        m = _FACTOR.match(text, pos)
        if m is None or m.end() == pos:
            raise DimensionError(f"Cannot parse units '{text}' at position {pos}")
        op, token, power = m.groups()
        exponent = to_rational(power) if power else Fraction(1)
        if op == "/":
            exponent = -exponent
        if token != "1":
            if token not in exps:
                raise DimensionError(f"Unknown unit '{token}' in '{text}'; known: {list(units)}")
            exps[token] += exponent
        pos = m.end()
    return Dimension(tuple(exps[u] for u in units), tuple(units))


# -------------------------------
# 2) QUANTITIES AND UNIT CONVENTIONS
# -------------------------------


@dataclass(frozen=True)
class Quantity:
    """A finite real value carrying a Dimension."""

    value: float
    dim: Dimension

    def __post_init__(self):
        value = float(self.value)
        if not math.isfinite(value):
            raise SymmetryLabError(f"Quantity value must be finite, got {self.value}")
        object.__setattr__(self, "value", value)

    def __mul__(self, other: "Quantity") -> "Quantity":
        return Quantity(self.value * other.value, dim_mul(self.dim, other.dim))

    def __truediv__(self, other: "Quantity") -> "Quantity":
        return Quantity(self.value / other.value, self.dim / other.dim)

    def __pow__(self, power: RationalLike) -> "Quantity":
        r = to_rational(power)
        return Quantity(self.value ** float(r), dim_pow(self.dim, r))

    def __add__(self, other: "Quantity") -> "Quantity":
        if self.dim != other.dim:
            raise DimensionError(f"Cannot add {self.dim} to {other.dim}")
        return Quantity(self.value + other.value, self.dim)

    def __sub__(self, other: "Quantity") -> "Quantity":
        if self.dim != other.dim:
            raise DimensionError(f"Cannot subtract {other.dim} from {self.dim}")
        return Quantity(self.value - other.value, self.dim)

    def __neg__(self) -> "Quantity":
        return Quantity(-self.value, self.dim)


@dataclass(frozen=True)
class UnitScaling:
    """
    Change of unit convention.

    ``scales[u]`` is the factor by which a quantity's numerical value is multiplied
    when base unit ``u`` is replaced (m -> cm gives 100 for ``m``).
    """

    scales: Tuple[float, ...]
    units: Tuple[str, ...] = BASE_UNITS

    def __post_init__(self):
        scales = tuple(float(s) for s in self.scales)
        if len(scales) != len(self.units):
            raise DimensionError(f"UnitScaling needs {len(self.units)} scales, got {len(scales)}")
        if not all(s > 0 and math.isfinite(s) for s in scales):
            raise SymmetryLabError(f"Unit scales must be finite and positive, got {scales}")
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "units", tuple(self.units))

    @classmethod
    def identity(cls, units: Sequence[str] = BASE_UNITS) -> "UnitScaling":
        return cls(tuple(1.0 for _ in units), tuple(units))

    @classmethod
    def from_mapping(cls, mapping: Dict[str, float], units: Sequence[str] = BASE_UNITS) -> "UnitScaling":
        unknown = set(mapping) - set(units)
        if unknown:
            raise DimensionError(f"Unknown base units {sorted(unknown)}")
        return cls(tuple(float(mapping.get(u, 1.0)) for u in units), tuple(units))

    def factor(self, dim: Dimension) -> float:
        """Multiplier applied to values of Dimension ``dim``."""
        if dim.units != self.units:
            raise DimensionError(f"Base units differ: {dim.units} vs {self.units}")
        log_factor = sum(float(e) * math.log(s) for e, s in zip(dim.exponents, self.scales) if e != 0)
        return math.exp(log_factor)

    def compose(self, other: "UnitScaling") -> "UnitScaling":
        """Apply self, then other."""
        if other.units != self.units:
            raise DimensionError(f"Base units differ: {self.units} vs {other.units}")
        return UnitScaling(tuple(a * b for a, b in zip(self.scales, other.scales)), self.units)

    def inverse(self) -> "UnitScaling":
        return UnitScaling(tuple(1.0 / s for s in self.scales), self.units)

    def to_json(self) -> Dict[str, float]:
        return dict(zip(self.units, self.scales))


def rescale_quantity(q: Quantity, s: UnitScaling) -> Quantity:
    """Same Dimension, value expressed in the new unit convention."""
    return Quantity(q.value * s.factor(q.dim), q.dim)


# -------------------------------
# 3) EXACT LINEAR ALGEBRA
# -------------------------------


def exponent_matrix(inputs: Sequence[Dimension]) -> List[List[Fraction]]:
    """Rows are base units, columns are inputs."""
    units = inputs[0].units
    for d in inputs:
        if d.units != units:
            raise DimensionError(f"Base units differ: {units} vs {d.units}")
    return [[d.exponents[row] for d in inputs] for row in range(len(units))]


def rref(matrix: Sequence[Sequence[RationalLike]]) -> Tuple[List[List[Fraction]], List[int]]:
    """
    Exact reduced row-echelon form.

    Pivots are chosen column by column from the left, so later columns end up free.
    Returns the reduced matrix and the pivot column indices.
    """
    rows = [[to_rational(x) for x in row] for row in matrix]
    if not rows:
        return [], []
    n_rows, n_cols = len(rows), len(rows[0])
    pivots: List[int] = []
    r = 0
    for c in range(n_cols):
        if r == n_rows:
            break
        k = next((i for i in range(r, n_rows) if rows[i][c] != 0), None)
        if k is None:
            continue
        rows[r], rows[k] = rows[k], rows[r]
        p = rows[r][c]
        rows[r] = [x / p for x in rows[r]]
        for i in range(n_rows):
            if i != r and rows[i][c] != 0:
                f = rows[i][c]
                rows[i] = [x - f * y for x, y in zip(rows[i], rows[r])]
        pivots.append(c)
        r += 1
    return rows, pivots


def _primitive(vector: List[Fraction]) -> Tuple[Fraction, ...]:
    """Scale to coprime integers, keeping the sign."""
    lcm = 1
    for x in vector:
        lcm = lcm * x.denominator // math.gcd(lcm, x.denominator)
    ints = [int(x * lcm) for x in vector]
    g = 0
    for x in ints:
        g = math.gcd(g, abs(x))
    g = g or 1
    return tuple(Fraction(x // g) for x in ints)


def _nullspace_from_rref(reduced: List[List[Fraction]], pivots: List[int], n: int) -> List[Tuple[Fraction, ...]]:
    basis = []
    for free in (c for c in range(n) if c not in pivots):
        v = [Fraction(0)] * n
        v[free] = Fraction(1)
        for row, pc in enumerate(pivots):
            v[pc] = -reduced[row][free]
        basis.append(_primitive(v))
    return basis


@dataclass(frozen=True)
class ExponentSolution:
    """Particular exponents reaching the target, plus the dimensionless directions."""

    particular: Tuple[Fraction, ...]
    nullspace: Tuple[Tuple[Fraction, ...], ...]

    @property
    def is_unique(self) -> bool:
        return not self.nullspace

    def to_json(self) -> dict:
        return {
            "particular": [format_rational(e) for e in self.particular],
            "nullspace": [[format_rational(e) for e in v] for v in self.nullspace],
        }


def solve_target(inputs: Sequence[Dimension], target: Dimension) -> ExponentSolution:
    """
    Find exponents e with sum_i e_i * dim_i == target.

    Free inputs (the later columns after left-to-right pivoting) get exponent zero.
    Raises InfeasibleError when the target is outside the rational span of the inputs.
    """
    if not inputs:
        raise SymmetryLabError("solve_target needs at least one input")
    _check_same_units(inputs[0], target)
    matrix = exponent_matrix(inputs)
    augmented = [row + [t] for row, t in zip(matrix, target.exponents)]
    reduced, pivots = rref(augmented)
    n = len(inputs)
    if n in pivots:
        raise InfeasibleError(
            f"infeasible: target {format_dimension(target)} not spanned by the input dimensions"
        )
    particular = [Fraction(0)] * n
    for row, col in enumerate(pivots):
        particular[col] = reduced[row][n]
    nullspace = _nullspace_from_rref(reduced, pivots, n)
    logger.debug("solve_target: particular=%s, %d Pi directions", particular, len(nullspace))
    return ExponentSolution(tuple(particular), tuple(nullspace))


def pi_basis(inputs: Sequence[Dimension]) -> List[Tuple[Fraction, ...]]:
    """Basis of all dimensionless power products of the inputs (primitive integer vectors)."""
    if not inputs:
        raise SymmetryLabError("pi_basis needs at least one input")
    reduced, pivots = rref(exponent_matrix(inputs))
    return _nullspace_from_rref(reduced, pivots, len(inputs))


def lattice_combinations(
    inputs: Sequence[Dimension], target: Optional[Dimension] = None, bound: int = 3
) -> List[Tuple[int, ...]]:
    """
    Brute-force search of integer exponent tuples in [-bound, bound]^n whose power
    product has the target Dimension (dimensionless when target is None).
    """
    if bound < 0:
        raise SymmetryLabError("lattice bound must be non-negative")
    if not inputs:
        raise SymmetryLabError("lattice_combinations needs at least one input")
    goal = target if target is not None else Dimension.dimensionless(inputs[0].units)
    matrix = exponent_matrix(inputs)
    found = []
    for combo in itertools.product(range(-bound, bound + 1), repeat=len(inputs)):
        if all(sum(a * e for a, e in zip(row, combo)) == t for row, t in zip(matrix, goal.exponents)):
            found.append(combo)
    return found


def in_rational_span(vector: Sequence[RationalLike], basis: Iterable[Sequence[RationalLike]]) -> bool:
    """True when vector is a rational combination of the basis vectors."""
    basis = [list(b) for b in basis]
    if all(to_rational(x) == 0 for x in vector):
        return True
    if not basis:
        return False
    _, base_pivots = rref(basis)
    _, extended_pivots = rref(basis + [list(vector)])
    return len(base_pivots) == len(extended_pivots)
