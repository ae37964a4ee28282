import json
import os

import numpy as np
import pandas as pd
import pytest

from cli.app import EXIT_AUDIT, EXIT_DOMAIN, EXIT_OK, EXIT_USAGE, parse_and_dispatch
from core.mlp import MLP, TrainConfig
from core.model import DynamicsModel, init_dynamics_net, save_model
from core.schema import FeatureSchema

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
SCHEMA = os.path.join(FIXTURES, "schema.json")

TINY_PROFILES = {
    "blackbody_tiny": {
        "version": 1,
        "experiment": "blackbody",
        "data": {"n_samples": 120, "seed": 0},
        "train": {"epochs": 2, "hidden": [4], "batch_size": 256},
        "search": {"lattice_bound": 1},
    },
    "pendulum_tiny": {
        "version": 1,
        "experiment": "pendulum",
        "data": {"n_train": 4, "train_labels": 2, "n_test": 2, "test_labels": 3, "seed": 0},
        "train": {"epochs": 2, "hidden": [4]},
        "models": {"covtest_trials": 2, "covtest_probes": 2},
    },
}


@pytest.fixture
def profiles(tmp_path):
    path = tmp_path / "profiles.json"
    path.write_text(json.dumps(TINY_PROFILES))
    return str(path)


# -------------------------------
# dim
# -------------------------------


def test_dim_solve_prints_exponents(capsys, tmp_path):
    out = tmp_path / "solve.json"

    code = parse_and_dispatch(["dim", "solve", "--inputs", "m:kg", "g:m/s^2", "h:m", "--target", "s", "--out", str(out)])

    assert code == EXIT_OK
    assert capsys.readouterr().out.splitlines()[0] == "(0, -1/2, 1/2)"
    assert json.loads(out.read_text())["inputs"] == ["m", "g", "h"]


def test_dim_solve_reports_nullspace(capsys):
    code = parse_and_dispatch(["dim", "solve", "--inputs", "m:kg", "g:m/s^2", "v:m/s", "theta:1", "--target", "m"])

    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "(0, -1, 2, 0)"
    assert "theta" in out


def test_dim_solve_infeasible_is_domain_error(capsys):
    code = parse_and_dispatch(["dim", "solve", "--inputs", "m:kg", "--target", "K"])

    assert code == EXIT_DOMAIN
    assert "not spanned" in capsys.readouterr().err


def test_unknown_unit_is_domain_error():
    assert parse_and_dispatch(["dim", "solve", "--inputs", "x:ft", "--target", "m"]) == EXIT_DOMAIN


def test_dim_pi_lists_basis(capsys):
    code = parse_and_dispatch(["dim", "pi", "--inputs", "a:m", "b:m", "t:s"])

    assert code == EXIT_OK
    assert capsys.readouterr().out.startswith("(-1, 1, 0)")


@pytest.mark.parametrize(
    "argv",
    [
        ["dim", "solve", "--target", "s"],
        ["dim", "solve", "--inputs", "mkg", "--target", "s"],
        ["dim", "explode"],
        ["audit", "lint", "--schema", "missing.json", "--pipeline", "missing.json"],
        [],
    ],
)
def test_usage_errors(argv, capsys):
    assert parse_and_dispatch(argv) == EXIT_USAGE


def test_help_exits_cleanly(capsys):
    assert parse_and_dispatch(["--help"]) == EXIT_OK
    assert "symlab" in capsys.readouterr().out


# -------------------------------
# normalize
# -------------------------------


def test_normalize_fit_then_apply(tmp_path, capsys):
    schema = FeatureSchema.load(SCHEMA)
    rng = np.random.default_rng(0)
    arrays = {
        "mass": rng.uniform(1, 2, 20),
        "length": rng.uniform(1, 2, 20),
        "height": rng.uniform(3, 5, 20),
        "duration": rng.uniform(1, 2, 20),
        "angle": rng.uniform(0, 1, 20),
        "velocity": rng.standard_normal((20, 3)),
        "stress": rng.standard_normal((20, 3, 3)),
    }
    data = tmp_path / "data.csv"
    schema.frame_from_arrays(arrays).to_csv(data, index=False)
    norm, normalized = tmp_path / "norm.json", tmp_path / "normalized.csv"

    fit = parse_and_dispatch(["normalize", "fit", "--schema", SCHEMA, "--data", str(data), "--out", str(norm)])
    apply = parse_and_dispatch(["normalize", "apply", "--normalizer", str(norm), "--data", str(data), "--out", str(normalized)])

    assert (fit, apply) == (EXIT_OK, EXIT_OK)
    frame = pd.read_csv(normalized)
    assert list(frame.columns) == schema.columns
    assert abs(frame["mass"].mean()) < 1e-9


# -------------------------------
# audit
# -------------------------------


@pytest.mark.parametrize("rule", ["R1", "R4", "R7"])
def test_lint_exit_codes(rule, tmp_path, capsys):
    pipelines = os.path.join(FIXTURES, "pipelines")
    report = tmp_path / "lint.json"

    failing = parse_and_dispatch(
        ["audit", "lint", "--schema", SCHEMA, "--pipeline", os.path.join(pipelines, f"{rule}_fail.json"), "--out", str(report)]
    )
    passing = parse_and_dispatch(["audit", "lint", "--schema", SCHEMA, "--pipeline", os.path.join(pipelines, f"{rule}_pass.json")])

    assert (failing, passing) == (EXIT_AUDIT, EXIT_OK)
    assert json.loads(report.read_text())["diagnostics"][0]["rule"] == rule


def test_covtest_passes_for_equivariant_model(tmp_path, capsys):
    net = init_dynamics_net("known_g", TrainConfig(hidden=(6,)))
    net.weights[-1][...] = 0.1 * np.random.default_rng(0).standard_normal(net.weights[-1].shape)
    path = tmp_path / "dyn.json"
    save_model(DynamicsModel("known_g", net, np.zeros(3), np.array([0.0, 0.0, -1.0])), str(path))
    report = tmp_path / "cov.json"

    code = parse_and_dispatch(["audit", "covtest", "--model", str(path), "--trials", "8", "--out", str(report)])

    assert code == EXIT_OK
    doc = json.loads(report.read_text())
    assert doc["passed"] is True
    assert doc["self_check"]["passed"] is True


def test_covtest_fails_for_raw_mlp(tmp_path, capsys):
    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps({"version": 1, "features": [{"name": "v", "kind": "vector3", "dim": "m/s"}]}))
    path = tmp_path / "mlp.json"
    save_model(MLP.initialize([3, 8, 3], "tanh", seed=1), str(path))

    code = parse_and_dispatch(
        ["audit", "covtest", "--model", str(path), "--schema", str(schema), "--output-dim", "m/s", "--trials", "4"]
    )

    assert code == EXIT_AUDIT
    assert "broken" in capsys.readouterr().out


def test_covtest_mlp_without_schema_is_domain_error(tmp_path, capsys):
    path = tmp_path / "mlp.json"
    save_model(MLP.initialize([3, 3], seed=1), str(path))

    assert parse_and_dispatch(["audit", "covtest", "--model", str(path)]) == EXIT_DOMAIN


# -------------------------------
# exp
# -------------------------------


def test_exp_list(profiles, capsys):
    assert parse_and_dispatch(["exp", "list", "--config", profiles]) == EXIT_OK
    assert "pendulum_tiny" in capsys.readouterr().out


def test_exp_unknown_profile_is_domain_error(profiles, capsys):
    code = parse_and_dispatch(["exp", "pendulum", "--config", profiles, "--profile", "nope"])

    assert code == EXIT_DOMAIN
    assert "Available" in capsys.readouterr().err


def test_exp_profile_for_other_experiment_is_domain_error(profiles, capsys):
    assert parse_and_dispatch(["exp", "pendulum", "--config", profiles, "--profile", "blackbody_tiny"]) == EXIT_DOMAIN


def test_exp_pendulum_is_byte_deterministic(profiles, tmp_path, capsys):
    a, b = tmp_path / "a" / "report.json", tmp_path / "b" / "report.json"
    base = ["exp", "pendulum", "--config", profiles, "--profile", "pendulum_tiny", "--seed", "3"]

    assert parse_and_dispatch(base + ["--out", str(a), "--svg", str(tmp_path / "curves.svg")]) == EXIT_OK
    assert parse_and_dispatch(base + ["--out", str(b)]) == EXIT_OK

    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a" / "report_curves.csv").read_bytes() == (tmp_path / "b" / "report_curves.csv").read_bytes()
    assert (tmp_path / "a" / "report_summary.csv").exists()
    assert (tmp_path / "curves.svg").read_text().startswith("<svg")
    doc = json.loads(a.read_text())
    assert doc["config"]["seed"] == 3
    assert set(doc["mean_state_rel_err"]) == {"known_g", "no_g", "learned_g"}


def test_exp_blackbody_writes_tables_workbook_and_models(profiles, tmp_path, capsys):
    out = tmp_path / "bb.json"
    models = tmp_path / "models"

    code = parse_and_dispatch(
        [
            "exp", "blackbody", "--config", profiles, "--profile", "blackbody_tiny",
            "--out", str(out), "--xlsx", str(tmp_path / "bb.xlsx"), "--save-models", str(models),
        ]
    )

    assert code == EXIT_OK
    assert len(pd.read_csv(tmp_path / "bb_scores.csv")) == 80
    assert set(pd.read_excel(tmp_path / "bb.xlsx", sheet_name=None)) == {"scores", "test_mse", "loss"}
    assert sorted(os.listdir(models)) == ["mlp.json", "units_covariant.json", "units_covariant_constant.json"]
    doc = json.loads(out.read_text())
    assert len(doc["constant"]["scores"]) == 80


def test_exp_without_out_prints_json(profiles, capsys):
    code = parse_and_dispatch(["exp", "pendulum", "--config", profiles, "--profile", "pendulum_tiny"])

    assert code == EXIT_OK
    out = capsys.readouterr().out
    doc = json.loads(out[: out.rindex("}") + 1])
    assert doc["experiment"] == "pendulum"
