from fractions import Fraction

import numpy as np
import pytest

from core.dimensions import (
    Dimension,
    Quantity,
    UnitScaling,
    combine_dimensions,
    format_dimension,
    format_power_product,
    in_rational_span,
    lattice_combinations,
    parse_units,
    pi_basis,
    rescale_quantity,
    rref,
    solve_target,
    to_rational,
)
from core.errors import DimensionError, InfeasibleError, SymmetryLabError

KG, M, S, K = (parse_units(u) for u in ("kg", "m", "s", "K"))
DIMLESS = Dimension.dimensionless()


def F(*xs):
    return tuple(Fraction(x) for x in xs)


def test_parse_units_grammar():
    assert parse_units("kg m^2/s^2/K") == Dimension((1, 2, -2, -1))
    assert parse_units("kg*m^2*s^-2") == Dimension((1, 2, -2, 0))
    assert parse_units("m^(1/2)") == Dimension((0, "1/2", 0, 0))
    assert parse_units("1") == DIMLESS
    assert parse_units("") == DIMLESS


def test_parse_units_rejects_unknown_token():
    with pytest.raises(DimensionError):
        parse_units("ft/s")


def test_format_dimension():
    assert format_dimension(parse_units("kg m^2 s^-2 K^-1")) == "kg m^2 s^-2 K^-1"
    assert format_dimension(DIMLESS) == "1"
    assert format_dimension(parse_units("m^(-1/2)")) == "m^(-1/2)"


def test_dimension_json_roundtrip():
    d = parse_units("kg m^(1/2)/s")
    assert d.to_json() == {"kg": "1", "m": "1/2", "s": "-1", "K": "0"}
    assert Dimension.from_mapping(d.to_json()) == d
    assert Dimension.from_mapping({"m": "-1"}) == parse_units("1/m")


def test_dimension_operators():
    assert M / S / S == parse_units("m/s^2")
    assert (M * M) ** "1/2" == M
    assert combine_dimensions([M, S], [1, -2]) == parse_units("m s^-2")


def test_to_rational_rejects_non_integer_float():
    assert to_rational(2.0) == 2
    with pytest.raises(DimensionError):
        to_rational(0.5)


def test_quantity_addition_requires_same_dimension():
    # Arrange
    a = Quantity(1.0, M)
    b = Quantity(2.0, S)

    # Act / Assert
    assert (a + a).value == 2.0
    with pytest.raises(DimensionError):
        a + b


def test_unit_scaling_factor_and_rescale():
    cm = UnitScaling.from_mapping({"m": 100.0})
    speed = Quantity(3.0, parse_units("m/s"))
    assert rescale_quantity(speed, cm).value == pytest.approx(300.0)
    area = Quantity(2.0, M * M)
    assert rescale_quantity(area, cm).value == pytest.approx(2.0e4)
    assert cm.compose(cm.inverse()).scales == pytest.approx((1.0, 1.0, 1.0, 1.0))


def test_pendulum_period_exponents():
    # mass, gravity, length -> time
    solution = solve_target([KG, parse_units("m/s^2"), M], S)

    assert solution.particular == F(0, "-1/2", "1/2")
    assert solution.nullspace == ()
    assert solution.is_unique
    assert solution.particular[0] == 0


def test_projectile_range_family():
    # mass, gravity, speed, angle -> length
    inputs = [KG, parse_units("m/s^2"), parse_units("m/s"), DIMLESS]

    solution = solve_target(inputs, M)

    assert solution.particular == F(0, -1, 2, 0)
    assert solution.nullspace == (F(0, 0, 0, 1),)


def test_planck_scaffold_without_and_with_h():
    lam, temp, c, k = M, K, parse_units("m/s"), parse_units("kg m^2 s^-2 K^-1")
    h = parse_units("kg m^2/s")
    intensity = parse_units("kg/m/s^3")

    pre = solve_target([lam, temp, c, k], intensity)
    assert pre.particular == F(-4, 1, 1, 1)
    assert pi_basis([lam, temp, c, k]) == []

    full = solve_target([lam, temp, c, k, h], intensity)
    assert combine_dimensions([lam, temp, c, k, h], full.particular) == intensity
    assert len(full.nullspace) == 1
    # h c / (lam k T), up to sign
    assert in_rational_span(F(-1, -1, 1, -1, 1), full.nullspace)


def test_infeasible_target():
    with pytest.raises(InfeasibleError, match="not spanned"):
        solve_target([KG], K)


def test_rref_pivots_left_to_right():
    reduced, pivots = rref([[1, 2, 3], [2, 4, 7]])

    assert pivots == [0, 2]
    assert reduced == [[1, 2, 0], [0, 0, 1]]


def test_pi_basis_is_primitive_integer():
    basis = pi_basis([M, M, S])

    assert basis == [F(-1, 1, 0)]


def test_format_power_product():
    assert format_power_product(["m", "g", "h"], F(0, "-1/2", "1/2")) == "g^(-1/2) h^(1/2)"
    assert format_power_product(["a"], F(0)) == "1"


def test_lattice_oracle_agrees_with_solver():
    inputs = [KG, parse_units("m/s^2"), parse_units("m/s"), DIMLESS]
    solution = solve_target(inputs, M)

    found = lattice_combinations(inputs, M, bound=2)

    assert sorted(found) == [(0, -1, 2, t) for t in range(-2, 3)]
    for combo in found:
        diff = [Fraction(a) - b for a, b in zip(combo, solution.particular)]
        assert in_rational_span(diff, solution.nullspace)


def test_lattice_needs_inputs():
    with pytest.raises(SymmetryLabError, match="at least one input"):
        lattice_combinations([], M)
    with pytest.raises(SymmetryLabError):
        lattice_combinations([M], M, bound=-1)


def test_random_instances_match_lattice_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(2, 6))
        inputs = [Dimension(tuple(int(x) for x in rng.integers(-2, 3, 4))) for _ in range(n)]
        if all(d.is_dimensionless for d in inputs):
            continue
        basis = pi_basis(inputs)
        for combo in lattice_combinations(inputs, None, bound=2):
            assert in_rational_span(combo, basis)
        for v in basis:
            assert combine_dimensions(inputs, v).is_dimensionless
