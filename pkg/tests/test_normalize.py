import numpy as np
import pandas as pd
import pytest

from core.dimensions import UnitScaling, parse_units
from core.errors import EmptyClassError, SchemaMismatchError
from core.geometry import apply_to_tensors, haar_orthogonal
from core.normalize import Normalizer, apply_normalizer, feature_spreads, fit_base_unit_scales, fit_normalizer
from core.schema import FeatureSchema

TOL = 1e-10

SCHEMA = FeatureSchema.build(
    [
        ("length", "scalar", parse_units("m")),
        ("height", "scalar", parse_units("m")),
        ("duration", "scalar", parse_units("s")),
        ("mass", "scalar", parse_units("kg")),
        ("velocity", "vector3", parse_units("m/s")),
        ("stress", "tensor3", parse_units("kg/m/s^2")),
    ]
)


def make_arrays(seed=0, n=50):
    rng = np.random.default_rng(seed)
    return {
        "length": rng.uniform(1.0, 3.0, n),
        "height": rng.uniform(10.0, 20.0, n),
        "duration": rng.uniform(0.1, 0.5, n),
        "mass": rng.uniform(2.0, 4.0, n),
        "velocity": rng.standard_normal((n, 3)) * 5.0 + 1.0,
        "stress": rng.standard_normal((n, 3, 3)),
    }


def make_frame(seed=0, n=50):
    return SCHEMA.frame_from_arrays(make_arrays(seed, n))


def test_units_classes_pool_same_dimension():
    frame = make_frame()

    n = fit_normalizer(frame, SCHEMA)

    members = sorted(tuple(sorted(c.members)) for c in n.classes)
    assert members == [("duration",), ("height", "length"), ("mass",)]
    pooled = np.concatenate([frame["length"], frame["height"]])
    assert n.class_of("length").shift == pytest.approx(pooled.mean())
    assert n.class_of("height").scale == pytest.approx(pooled.std())


def test_vector_scale_is_rms_component_length():
    frame = make_frame()
    v = SCHEMA.feature_array(frame, "velocity")

    n = fit_normalizer(frame, SCHEMA)

    expected = np.sqrt(np.mean(np.sum((v - v.mean(axis=0)) ** 2, axis=1) / 3.0))
    assert n.vectors["velocity"].scale == pytest.approx(expected)


def test_normalization_commutes_with_unit_change():
    # Arrange
    arrays = make_arrays(1)
    scaling = UnitScaling.from_mapping({"kg": 1e3, "m": 1e2, "s": 1.0 / 60.0})
    moved = {f.name: arrays[f.name] * scaling.factor(f.dim) for f in SCHEMA.features}

    # Act
    a = apply_normalizer(fit_normalizer(SCHEMA.frame_from_arrays(arrays), SCHEMA), SCHEMA.frame_from_arrays(arrays))
    b = apply_normalizer(fit_normalizer(SCHEMA.frame_from_arrays(moved), SCHEMA), SCHEMA.frame_from_arrays(moved))

    # Assert
    np.testing.assert_allclose(b.to_numpy(), a.to_numpy(), rtol=TOL, atol=TOL)


def test_normalization_commutes_with_rotation():
    arrays = make_arrays(2)
    R = haar_orthogonal(9).matrix
    moved = dict(arrays, velocity=arrays["velocity"] @ R.T, stress=apply_to_tensors(R, arrays["stress"]))

    a = apply_normalizer(fit_normalizer(SCHEMA.frame_from_arrays(arrays), SCHEMA), SCHEMA.frame_from_arrays(arrays))
    b = apply_normalizer(fit_normalizer(SCHEMA.frame_from_arrays(moved), SCHEMA), SCHEMA.frame_from_arrays(moved))

    va, vb = SCHEMA.feature_array(a, "velocity"), SCHEMA.feature_array(b, "velocity")
    np.testing.assert_allclose(vb, va @ R.T, atol=TOL)
    ta, tb = SCHEMA.feature_array(a, "stress"), SCHEMA.feature_array(b, "stress")
    np.testing.assert_allclose(tb, apply_to_tensors(R, ta), atol=TOL)
    np.testing.assert_allclose(b["length"], a["length"], atol=TOL)


def test_degenerate_scale_warns_and_uses_one():
    frame = make_frame()
    frame["mass"] = 2.5

    n = fit_normalizer(frame, SCHEMA)

    assert n.class_of("mass").scale == 1.0
    assert any("DegenerateScale" in w for w in n.warnings)


def test_empty_frame_raises():
    with pytest.raises(EmptyClassError):
        fit_normalizer(make_frame().iloc[:0], SCHEMA)


def test_apply_rejects_missing_columns():
    frame = make_frame()
    n = fit_normalizer(frame, SCHEMA)

    with pytest.raises(SchemaMismatchError):
        apply_normalizer(n, frame.drop(columns=["velocity.y"]))


def test_extra_columns_pass_through():
    frame = make_frame()
    frame["label"] = np.arange(len(frame))

    out = apply_normalizer(fit_normalizer(frame, SCHEMA), frame)

    assert (out["label"] == frame["label"]).all()


def test_json_roundtrip_applies_identically(tmp_path):
    frame = make_frame(3)
    n = fit_normalizer(frame, SCHEMA)
    path = tmp_path / "norm.json"

    n.save(str(path))
    loaded = Normalizer.load(str(path))

    pd.testing.assert_frame_equal(apply_normalizer(loaded, frame), apply_normalizer(n, frame))


def test_base_unit_scales_follow_unit_change():
    arrays = make_arrays(4)
    scaling = UnitScaling.from_mapping({"kg": 10.0, "m": 0.01, "s": 3.0})
    moved = {f.name: arrays[f.name] * scaling.factor(f.dim) for f in SCHEMA.features}

    before = fit_base_unit_scales(SCHEMA.frame_from_arrays(arrays), SCHEMA)
    after = fit_base_unit_scales(SCHEMA.frame_from_arrays(moved), SCHEMA)

    ratio = np.array(after.scales.scales) / np.array(before.scales.scales)
    np.testing.assert_allclose(ratio, [10.0, 0.01, 3.0, 1.0], rtol=1e-9)
    assert after.residual == pytest.approx(before.residual, abs=1e-9)


def test_feature_spreads_skip_nothing_for_live_data():
    spreads = feature_spreads(make_frame(), SCHEMA)

    assert set(spreads) == set(SCHEMA.names)
    assert all(v > 0 for v in spreads.values())


def test_single_length_feature_sets_the_length_scale():
    schema = FeatureSchema.build([("length", "scalar", parse_units("m"))])
    frame = schema.frame_from_arrays({"length": np.array([0.0, 10.0, 0.0, 10.0])})

    fit = fit_base_unit_scales(frame, schema)

    np.testing.assert_allclose(fit.scales.scales, [1.0, 5.0, 1.0, 1.0], rtol=1e-12)
    assert fit.residual == pytest.approx(0.0, abs=1e-12)


def test_dimensionless_features_leave_unit_scales_at_one():
    dimless = parse_units("1")
    schema = FeatureSchema.build([("ratio", "scalar", dimless), ("angle", "scalar", dimless)])
    frame = schema.frame_from_arrays({"ratio": np.array([0.0, 4.0]), "angle": np.array([0.0, 0.5])})

    fit = fit_base_unit_scales(frame, schema)

    assert fit.scales.scales == (1.0, 1.0, 1.0, 1.0)
    assert fit.residual == pytest.approx(np.sqrt(np.mean(np.log([2.0, 0.25]) ** 2)), rel=1e-12)
