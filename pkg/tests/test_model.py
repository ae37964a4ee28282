import numpy as np
import pandas as pd
import pytest

from core.audit import CovarianceTestSpec, model_function, random_probes, test_covariance
from core.blackbody import ACTION, INPUTS, INTENSITY, TARGET, BlackbodyConfig, generate_blackbody, split_frame
from core.dimensions import format_dimension, parse_units
from core.errors import ConfigError, InfeasibleError, SymmetryLabError
from core.mlp import TrainConfig
from core.model import (
    DynamicsModel,
    SearchConfig,
    UnitsCovariantModel,
    candidate_seed,
    fit_dynamics,
    fit_units_covariant,
    init_dynamics_net,
    load_model,
    model_from_json,
    parse_input_dims,
    predict_dynamics,
    save_model,
    search_dimensional_constant,
)
from core.pendulum import (
    PendulumDataset,
    PendulumParams,
    PendulumState,
    equilibrium_state,
    generate_dataset,
    state_rel_err_array,
)

M, S = parse_units("m"), parse_units("s")
QUICK = TrainConfig(epochs=20, hidden=(6,), learning_rate=0.01, batch_size=64)


@pytest.fixture(scope="module")
def planck_splits():
    frame = generate_blackbody(BlackbodyConfig(n_samples=300, noise=0.01, seed=3))
    return split_frame(frame, (0.6, 0.2, 0.2), seed=3)


@pytest.fixture(scope="module")
def planck_model(planck_splits):
    train, val, _ = planck_splits
    return fit_units_covariant(train, INPUTS, TARGET, INTENSITY, ACTION, QUICK, val)


# -------------------------------
# units-covariant regression
# -------------------------------


def test_empty_pi_basis_fits_closed_form_prefactor():
    rng = np.random.default_rng(0)
    x, t = rng.uniform(1.0, 2.0, 40), rng.uniform(0.5, 3.0, 40)
    data = {"x": x, "t": t, "y": 3.0 * x**2 / t}

    model = fit_units_covariant(data, {"x": M, "t": S}, "y", parse_units("m^2/s"))

    assert model.pi_basis == ()
    assert model.net is None
    assert model.log_alpha == pytest.approx(np.log(3.0), rel=1e-12)
    np.testing.assert_allclose(model.predict(data), data["y"], rtol=1e-12)


def test_infeasible_target_raises():
    with pytest.raises(InfeasibleError):
        fit_units_covariant({"mass": [1.0], "y": [1.0]}, {"mass": parse_units("kg")}, "y", parse_units("K"))


def test_non_positive_inputs_rejected():
    with pytest.raises(SymmetryLabError, match="positive"):
        fit_units_covariant({"x": [1.0, -1.0], "y": [1.0, 2.0]}, {"x": M}, "y", M)


def test_constant_name_must_not_clash():
    with pytest.raises(ConfigError):
        fit_units_covariant({"x": [1.0], "y": [1.0]}, {"x": M}, "y", M, constant_name="x")


def test_constant_enters_pi_with_unit_exponent(planck_model):
    assert planck_model.constant.dim == ACTION
    assert len(planck_model.pi_basis) == 1
    assert planck_model.pi_basis[0][-1] == 1
    assert planck_model.net.first_bias is False
    assert planck_model.val_mse is not None


def test_fitted_model_is_covariant_under_unit_rescaling(planck_model, planck_splits):
    fn, schema, out, defaults = model_function(planck_model)
    probes = planck_splits[2].head(4).to_dict(orient="records")
    for p in probes:
        p[planck_model.constant.name] = defaults[planck_model.constant.name]

    report = test_covariance(fn, CovarianceTestSpec(group="UnitsRescaling", trials=32, seed=1), schema, probes, out)

    assert report.passed
    assert report.self_check_passed


def test_dropping_the_constant_from_the_rescaling_breaks_covariance(planck_model, planck_splits):
    fn, schema, out, defaults = model_function(planck_model)
    probes = planck_splits[2].head(4).to_dict(orient="records")
    for p in probes:
        p[planck_model.constant.name] = defaults[planck_model.constant.name]
    spec = CovarianceTestSpec(group="UnitsRescaling", trials=4, seed=1, transform=tuple(INPUTS))

    report = test_covariance(fn, spec, schema, probes, out)

    assert not report.passed


def test_reciprocal_constant_predicts_identically(planck_model, planck_splits):
    test = planck_splits[2]

    flipped = planck_model.reciprocal()

    assert flipped.constant.dim == ACTION**-1
    assert flipped.constant.magnitude == pytest.approx(1.0 / planck_model.constant.magnitude, rel=1e-12)
    np.testing.assert_allclose(flipped.predict_log(test), planck_model.predict_log(test), rtol=1e-10)
    np.testing.assert_allclose(flipped.reciprocal().predict_log(test), planck_model.predict_log(test), rtol=1e-10)


def test_reciprocal_without_constant_raises():
    model = fit_units_covariant({"x": [1.0, 2.0], "y": [2.0, 4.0]}, {"x": M}, "y", M)

    with pytest.raises(SymmetryLabError):
        model.reciprocal()


def test_units_covariant_json_roundtrip(planck_model, planck_splits, tmp_path):
    path = tmp_path / "model.json"

    save_model(planck_model, str(path))
    again = load_model(str(path))

    assert isinstance(again, UnitsCovariantModel)
    assert again.pi_basis == planck_model.pi_basis
    assert again.constant == planck_model.constant
    np.testing.assert_allclose(again.predict(planck_splits[2]), planck_model.predict(planck_splits[2]), rtol=1e-14)


def test_load_model_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_model(str(tmp_path / "nope.json"))


def test_model_from_json_rejects_unknown_kind():
    with pytest.raises(ConfigError, match="Unknown model kind"):
        model_from_json({"kind": "forest"})


def test_parse_input_dims_keeps_order():
    dims = parse_input_dims({"g": "m/s^2", "m": "kg"})

    assert list(dims) == ["g", "m"]
    assert dims["g"] == parse_units("m s^-2")


# -------------------------------
# constant search
# -------------------------------


def test_search_covers_lattice_and_trains_one_per_reciprocal_pair(planck_splits):
    train, val, _ = planck_splits
    cfg = TrainConfig(epochs=2, hidden=(4,), batch_size=256)

    result = search_dimensional_constant(train, INPUTS, TARGET, INTENSITY, cfg, SearchConfig(), val)

    table = result.table
    assert len(table) == 80
    assert int(table["trained"].sum()) == 40
    indexed = table.set_index(["kg", "m", "s", "K"])
    for e, row in indexed.iterrows():
        if row["status"] != "ok":
            continue
        twin = indexed.loc[tuple(-x for x in e)]
        assert twin["val_mse"] == row["val_mse"]
        assert twin["log_magnitude"] == pytest.approx(-row["log_magnitude"])
        assert twin["trained"] != row["trained"]
    assert result.best_model.constant.magnitude == pytest.approx(result.best_magnitude)
    assert result.best_val_mse == pytest.approx(float(table["val_mse"].min()), rel=0.05)
    assert isinstance(result.constant_needed, bool)
    assert result.to_json()["dimension"] == format_dimension(result.best_dim)


def test_search_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        SearchConfig(lattice_bound=0)
    with pytest.raises(ConfigError, match="Unknown search settings"):
        SearchConfig.from_dict({"bound": 2})


def test_candidate_seed_depends_on_exponents():
    assert candidate_seed(0, (1, 0, 0, 0), 1) == candidate_seed(0, (1, 0, 0, 0), 1)
    assert candidate_seed(0, (1, 0, 0, 0), 1) != candidate_seed(0, (-1, 0, 0, 0), 1)


def test_search_is_repeatable_for_a_seed(planck_splits):
    train, val, _ = planck_splits
    cfg = TrainConfig(epochs=3, hidden=(4,), batch_size=64, seed=5)

    first = search_dimensional_constant(train, INPUTS, TARGET, INTENSITY, cfg, SearchConfig(), val)
    again = search_dimensional_constant(train, INPUTS, TARGET, INTENSITY, cfg, SearchConfig(workers=2), val)

    pd.testing.assert_frame_equal(first.table, again.table)
    assert first.best_exponents == again.best_exponents


# -------------------------------
# hand-derived gradients
# -------------------------------

EPS = 1e-6


class _CapturedTraining:
    """Stands in for run_training and keeps the trainer's parameters and loss function."""

    def __call__(self, params, loss_and_grads, n_samples, cfg, val_loss=None, label="model"):
        self.params, self.loss_and_grads, self.n_samples = params, loss_and_grads, n_samples
        return [], []


def _numeric_gradient(loss, p):
    numeric = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        saved = p[idx]
        p[idx] = saved + EPS
        up = loss()
        p[idx] = saved - EPS
        down = loss()
        p[idx] = saved
        numeric[idx] = (up - down) / (2 * EPS)
    return numeric


def _assert_gradients_match(captured):
    idx = np.arange(captured.n_samples)
    _, grads = captured.loss_and_grads(idx)

    def loss():
        return captured.loss_and_grads(idx)[0]

    assert len(grads) == len(captured.params)
    for p, g in zip(captured.params, grads):
        np.testing.assert_allclose(_numeric_gradient(loss, p), g, rtol=1e-4, atol=1e-7)


def test_constant_log_magnitude_gradient_matches_central_differences(planck_splits, monkeypatch):
    captured = _CapturedTraining()
    monkeypatch.setattr("core.model.run_training", captured)
    train, _, _ = planck_splits

    fit_units_covariant(train, INPUTS, TARGET, INTENSITY, ACTION, TrainConfig(hidden=(4,), seed=2))

    assert captured.params[-1].shape == (1,)
    _assert_gradients_match(captured)


def test_learned_vector_gradient_matches_central_differences(monkeypatch):
    captured = _CapturedTraining()
    monkeypatch.setattr("core.model.run_training", captured)

    fit_dynamics(generate_dataset(5, 2, seed=1), "learned_g", TrainConfig(hidden=(4,), seed=3))
    rng = np.random.default_rng(0)
    for p in captured.params[:-1]:
        p += 0.1 * rng.standard_normal(p.shape)

    assert captured.params[-1].shape == (3,)
    _assert_gradients_match(captured)


# -------------------------------
# equivariant dynamics
# -------------------------------


def _random_model(mode, seed=0):
    cfg = TrainConfig(hidden=(8,), seed=seed)
    net = init_dynamics_net(mode, cfg)
    rng = np.random.default_rng(seed)
    net.weights[-1][...] = 0.1 * rng.standard_normal(net.weights[-1].shape)
    hidden = None if mode == "no_g" else np.array([0.0, 0.0, -1.0])
    return DynamicsModel(mode, net, np.zeros(3), hidden)


def test_untrained_network_returns_initial_state():
    net = init_dynamics_net("known_g", TrainConfig(hidden=(8,)))
    model = DynamicsModel("known_g", net, np.zeros(3), np.array([0.0, 0.0, -1.0]))
    z0 = generate_dataset(3, 1, seed=0).initial

    pred = model.predict_arrays(z0, np.full(3, 0.1))

    np.testing.assert_allclose(pred, z0, atol=1e-12)


@pytest.mark.parametrize("mode", ["known_g", "no_g", "learned_g"])
def test_dynamics_model_is_o3_covariant(mode):
    model = _random_model(mode)
    fn, schema, out, defaults = model_function(model)
    probes = random_probes(schema, 4, seed=2, defaults=defaults)

    report = test_covariance(fn, CovarianceTestSpec(group="O3", trials=16, seed=0), schema, probes, out)

    assert report.passed


def test_unrotated_gravity_breaks_o3_covariance():
    model = _random_model("known_g")
    fn, schema, out, defaults = model_function(model)
    probes = random_probes(schema, 4, seed=2, defaults=defaults)
    spec = CovarianceTestSpec(group="O3", trials=4, seed=0, transform=("q1", "q2", "p1", "p2", "q0", "dt"))

    report = test_covariance(fn, spec, schema, probes, out)

    assert not report.passed


@pytest.mark.parametrize("mode, moved", [("no_g", None), ("known_g", ("q1", "q2", "p1", "p2", "q0", "dt"))])
def test_rotations_about_gravity_axis_need_no_hidden_vector(mode, moved):
    model = _random_model(mode, seed=1)
    fn, schema, out, defaults = model_function(model)
    probes = random_probes(schema, 4, seed=3, defaults=defaults)
    spec = CovarianceTestSpec(group="O2Axis", axis=(0.0, 0.0, 1.0), trials=16, seed=1, transform=moved)

    report = test_covariance(fn, spec, schema, probes, out)

    assert report.passed


def test_mode_requires_hidden_vector():
    net = init_dynamics_net("known_g", TrainConfig(hidden=(4,)))

    with pytest.raises(ConfigError, match="hidden vector"):
        DynamicsModel("known_g", net, np.zeros(3))
    with pytest.raises(ConfigError):
        DynamicsModel("no_g", net, np.zeros(3))


@pytest.mark.parametrize("mode", ["known_g", "no_g", "learned_g"])
def test_fit_dynamics_short_run(mode):
    train = generate_dataset(6, 2, seed=0)
    cfg = TrainConfig(epochs=5, hidden=(8,), learning_rate=1e-3)

    model = fit_dynamics(train, mode, cfg)

    assert len(model.loss_history) == 5
    assert np.all(np.isfinite(model.loss_history))
    if mode == "known_g":
        np.testing.assert_array_equal(model.hidden, [0.0, 0.0, -1.0])
    if mode == "learned_g":
        assert model.hidden.shape == (3,)
        assert np.all(np.isfinite(model.hidden))


def test_fit_dynamics_rejects_unknown_mode():
    with pytest.raises(ConfigError):
        fit_dynamics(generate_dataset(2, 1, seed=0), "guess_g")


def test_zero_time_step_learns_the_identity():
    trainset = generate_dataset(8, 1, seed=2)
    identity = PendulumDataset(trainset.params, trainset.initial, np.array([0.0]), trainset.initial[:, None].copy())

    model = fit_dynamics(identity, "known_g", TrainConfig(epochs=50, hidden=(8,), learning_rate=1e-3))

    pred = model.predict_arrays(identity.initial, np.zeros(len(identity)))
    assert np.max(state_rel_err_array(pred, identity.initial)) < 1e-3


def test_predict_dynamics_matches_batched_prediction():
    model = _random_model("learned_g", seed=4)
    z0 = PendulumState.from_array(generate_dataset(1, 1, seed=5).initial[0])
    times = [0.1, 0.2, 0.3]

    states = predict_dynamics(model, z0, times)

    batched = model.predict_arrays(np.repeat(z0.to_array()[None], 3, axis=0), np.array(times))
    np.testing.assert_allclose(np.stack([s.to_array() for s in states]), batched, atol=1e-12)
    assert states[0].q1.dim == M
    assert states[0].p1.dim == parse_units("kg m/s")


def test_predict_dynamics_needs_times():
    model = _random_model("no_g")

    with pytest.raises(SymmetryLabError):
        predict_dynamics(model, equilibrium_state(PendulumParams()), [])


def test_dynamics_json_roundtrip():
    model = _random_model("known_g", seed=6)
    z0 = generate_dataset(2, 1, seed=1).initial

    again = model_from_json(model.to_json())

    assert again.roles == ("q1-q0", "q2-q0", "p1", "p2", "g")
    np.testing.assert_array_equal(again.predict_arrays(z0, np.array([0.1, 0.2])), model.predict_arrays(z0, np.array([0.1, 0.2])))


def test_predict_record_uses_state_names():
    model = _random_model("no_g")
    z = generate_dataset(1, 1, seed=0).initial[0]
    record = {"q1": z[0], "q2": z[1], "p1": z[2], "p2": z[3], "q0": np.zeros(3), "dt": 0.2}

    out = model.predict_record(record)

    assert sorted(out) == ["p1", "p2", "q1", "q2"]
    np.testing.assert_allclose(np.stack([out[n] for n in ("q1", "q2", "p1", "p2")]), model.predict_arrays(z[None], np.array([0.2]))[0])


@pytest.mark.slow
def test_search_reports_no_constant_when_none_is_needed():
    rng = np.random.default_rng(0)
    v, g = rng.uniform(1.0, 10.0, 2000), rng.uniform(5.0, 15.0, 2000)
    data = {"v": v, "g": g, "range": v**2 / g * (1.0 + 0.05 * rng.standard_normal(2000))}
    inputs = {"v": parse_units("m/s"), "g": parse_units("m/s^2")}

    result = search_dimensional_constant(data, inputs, "range", M, TrainConfig(epochs=300, hidden=(8, 8)))

    assert not result.constant_needed
