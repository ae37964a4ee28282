import numpy as np
import pytest

from core.errors import ConfigError, NonFiniteError, WidthMismatchError
from core.mlp import (
    MLP,
    TrainConfig,
    loss_history_frame,
    mlp_input_jacobian,
    mlp_predict,
    mse_loss,
    run_training,
    split_indices,
    train_mlp,
)

EPS = 1e-6
RTOL = 1e-4


def _close(numeric, analytic):
    return np.all(np.abs(numeric - analytic) <= RTOL * (np.abs(numeric) + np.abs(analytic)) + 1e-8)


@pytest.mark.parametrize("activation", ["tanh", "sigmoid", "identity"])
def test_backprop_matches_central_differences(activation):
    # Arrange
    rng = np.random.default_rng(0)
    net = MLP.initialize([3, 5, 4, 2], activation, seed=1)
    for b in net.biases:
        b[...] = rng.standard_normal(b.shape)
    net.input_shift, net.input_scale = rng.standard_normal(3), rng.uniform(0.5, 2.0, 3)
    net.output_scale = np.array([2.0, 0.5])
    x = rng.standard_normal((6, 3))
    weights = rng.standard_normal((6, 2))

    def loss():
        return float(np.sum(net.forward(x)[0] * weights))

    # Act
    _, cache = net.forward(x)
    grads, d_in = net.backward(cache, weights)

    # Assert
    for p, g in zip(net.parameters(), grads):
        numeric = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            saved = p[idx]
            p[idx] = saved + EPS
            up = loss()
            p[idx] = saved - EPS
            down = loss()
            p[idx] = saved
            numeric[idx] = (up - down) / (2 * EPS)
        assert _close(numeric, g)

    numeric_in = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        saved = x[idx]
        x[idx] = saved + EPS
        up = loss()
        x[idx] = saved - EPS
        down = loss()
        x[idx] = saved
        numeric_in[idx] = (up - down) / (2 * EPS)
    assert _close(numeric_in, d_in)


def test_first_layer_without_bias_has_zero_bias_gradient():
    net = MLP.initialize([2, 3, 1], seed=0, first_bias=False)
    net.biases[0][...] = 5.0
    x = np.ones((4, 2))

    out_with_bias_ignored = net.predict_batch(x)
    net.biases[0][...] = 0.0
    _, cache = net.forward(x)
    grads, _ = net.backward(cache, np.ones((4, 1)))

    np.testing.assert_allclose(out_with_bias_ignored, net.predict_batch(x))
    assert np.all(grads[1] == 0.0)


def test_input_jacobian_matches_differences():
    net = MLP.initialize([2, 6, 3], "tanh", seed=4)
    x = np.array([0.3, -0.7])

    jac = mlp_input_jacobian(net, x)

    numeric = np.zeros((3, 2))
    for j in range(2):
        dx = np.zeros(2)
        dx[j] = EPS
        numeric[:, j] = (np.array(mlp_predict(net, x + dx)) - np.array(mlp_predict(net, x - dx))) / (2 * EPS)
    assert _close(numeric, jac)


def test_width_mismatch():
    net = MLP.initialize([3, 4, 1])

    with pytest.raises(WidthMismatchError):
        mlp_predict(net, [1.0, 2.0])
    with pytest.raises(WidthMismatchError):
        net.forward(np.zeros((5, 4)))


def test_json_roundtrip_predicts_identically():
    net = MLP.initialize([2, 4, 1], "relu", seed=3)
    net.output_shift = np.array([1.5])
    x = np.random.default_rng(0).standard_normal((5, 2))

    again = MLP.from_json(net.to_json())

    np.testing.assert_array_equal(again.predict_batch(x), net.predict_batch(x))
    assert again.activation == "relu"


def test_training_reduces_loss():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (200, 2))
    y = np.sin(2 * x[:, 0]) + x[:, 1] ** 2

    net = train_mlp((x, y), TrainConfig(epochs=300, learning_rate=0.01, hidden=(16,), batch_size=64))

    assert net.loss_history[-1] < 0.2 * net.loss_history[0]


@pytest.mark.parametrize("power", [1, 2])
def test_sanity_fit_on_unit_interval(power):
    rng = np.random.default_rng(power)
    x = rng.uniform(0.0, 1.0, (100, 1))
    x_test = np.linspace(0.0, 1.0, 51)[:, None]

    net = train_mlp((x, x[:, 0] ** power), TrainConfig(epochs=1000, learning_rate=1e-2, hidden=(16,), batch_size=100))

    test_mse = float(np.mean((net.predict_batch(x_test)[:, 0] - x_test[:, 0] ** power) ** 2))
    assert test_mse < 1e-3


def test_zero_epochs_returns_initialized_network():
    x = np.arange(10.0)[:, None]

    net = train_mlp((x, 2 * x[:, 0]), TrainConfig(epochs=0, hidden=(3,)))

    assert net.loss_history == []
    assert net.input_shift[0] == pytest.approx(4.5)


def test_training_is_deterministic_for_a_seed():
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal((64, 3)), rng.standard_normal(64)
    cfg = TrainConfig(epochs=20, hidden=(5,), batch_size=16, seed=7)

    a, b = train_mlp((x, y), cfg), train_mlp((x, y), cfg)

    assert a.loss_history == b.loss_history


def test_restore_best_keeps_lowest_validation_loss():
    rng = np.random.default_rng(2)
    x, y = rng.standard_normal((80, 1)), rng.standard_normal(80)
    cfg = TrainConfig(epochs=40, hidden=(8,), validation_fraction=0.25, restore_best=True, learning_rate=0.05)

    net = train_mlp((x, y), cfg)

    _, val = split_indices(80, 0.25, cfg.seed)
    assert len(net.val_history) == 40
    assert mse_loss(net, x[val], y[val, None])[0] == pytest.approx(min(net.val_history), rel=1e-12)


def test_non_finite_loss_raises():
    param = np.zeros(1)

    with pytest.raises(NonFiniteError):
        run_training([param], lambda idx: (float("nan"), [np.zeros(1)]), 4, TrainConfig(epochs=1))


def test_config_rejects_unknown_keys_and_bad_values():
    with pytest.raises(ConfigError, match="Unknown train settings"):
        TrainConfig.from_dict({"epochz": 3})
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="rmsprop")
    assert TrainConfig.from_dict({"hidden": [4, 4]}).hidden == (4, 4)


def test_split_indices_partition():
    train, val = split_indices(10, 0.3, seed=0)

    assert len(val) == 3
    assert sorted(np.concatenate([train, val]).tolist()) == list(range(10))


def test_loss_history_frame():
    frame = loss_history_frame([3.0, 2.0], [4.0, 1.0])

    assert list(frame.columns) == ["epoch", "train_loss", "val_loss"]
    assert frame["epoch"].tolist() == [1, 2]
