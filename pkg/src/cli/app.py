#!/usr/bin/env python3
"""
symlab command line
===================

    symlab dim solve --inputs m:kg g:m/s^2 h:m --target s
    symlab dim pi --inputs lam:m T:K c:m/s k:"kg m^2 s^-2 K^-1" h:"kg m^2/s"
    symlab normalize fit --schema s.json --data d.csv --out norm.json
    symlab normalize apply --normalizer norm.json --data d.csv --out d_norm.csv
    symlab audit lint --schema s.json --pipeline p.json
    symlab audit covtest --model m.json --group O3 --trials 32 --tol 1e-8
    symlab exp blackbody --profile blackbody_quick --out report.json --svg plot.svg
    symlab exp pendulum --profile pendulum_quick --out report.json --svg curves.svg

Exit codes: 0 success, 1 usage error, 2 domain error, 3 failed audit.
"""

import argparse
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence

import pandas as pd
from dotenv import load_dotenv

from core.audit import (
    GROUPS,
    CovarianceTestSpec,
    PipelineDesc,
    lint_pipeline,
    model_function,
    probes_from_frame,
    random_probes,
    test_covariance,
)
from core.blackbody import BlackbodyConfig, run_blackbody_experiment
from core.dimensions import format_dimension, format_power_product, format_rational, parse_units, pi_basis, solve_target
from core.errors import ConfigError, SymmetryLabError
from core.mlp import TrainConfig, loss_history_frame
from core.model import SearchConfig, load_model, parse_input_dims, save_model
from core.normalize import Normalizer, apply_normalizer, fit_normalizer
from core.pendulum import PendulumExperimentConfig, run_pendulum_experiment
from core.schema import FeatureSchema
from utils.config_loader import DEFAULT_CONFIG_FILE, get_available_configs, load_config
from utils.excel_report import write_workbook
from utils.report_io import dumps_report, sibling_path, write_csv, write_json
from utils.svg_plot import write_line_plot

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_AUDIT = 0, 1, 2, 3
LOG_LEVEL_ENV = "SYMLAB_LOG_LEVEL"


class UsageError(Exception):
    """Bad flags or missing input files."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _require_file(path: Optional[str], flag: str) -> str:
    if not path:
        raise UsageError(f"{flag} is required")
    if not os.path.exists(path):
        raise UsageError(f"{flag}: file not found: {path}")
    return path


def _parse_named_units(items: Sequence[str]) -> Dict[str, str]:
    """['m:kg', 'g:m/s^2'] -> {'m': 'kg', 'g': 'm/s^2'}"""
    out: Dict[str, str] = {}
    for item in items:
        name, sep, units = item.partition(":")
        if not sep or not name:
            raise UsageError(f"Expected name:units, got {item!r}")
        if name in out:
            raise UsageError(f"Input {name!r} given twice")
        out[name] = units
    return out


# ===============================
# dim
# ===============================


def cmd_dim_solve(args) -> int:
    inputs = parse_input_dims(_parse_named_units(args.inputs))
    target = parse_units(args.target)
    solution = solve_target(list(inputs.values()), target)
    names = list(inputs)
    print("(" + ", ".join(format_rational(e) for e in solution.particular) + ")")
    print(f"✅ {args.target} = {format_power_product(names, solution.particular)}")
    if solution.nullspace:
        print(f"⚠️  Not unique: {len(solution.nullspace)} dimensionless direction(s)")
        for v in solution.nullspace:
            print(f"   {format_power_product(names, v)}")
    if args.out:
        write_json({"inputs": names, **solution.to_json()}, args.out)
    return EXIT_OK


def cmd_dim_pi(args) -> int:
    inputs = parse_input_dims(_parse_named_units(args.inputs))
    names = list(inputs)
    basis = pi_basis(list(inputs.values()))
    if not basis:
        print("⚠️  No dimensionless combinations")
    for v in basis:
        print("(" + ", ".join(format_rational(e) for e in v) + ")  " + format_power_product(names, v))
    if args.out:
        write_json({"inputs": names, "pi_basis": [[format_rational(e) for e in v] for v in basis]}, args.out)
    return EXIT_OK


# ===============================
# normalize
# ===============================


def cmd_normalize_fit(args) -> int:
    schema = FeatureSchema.load(_require_file(args.schema, "--schema"))
    frame = pd.read_csv(_require_file(args.data, "--data"))
    normalizer = fit_normalizer(frame, schema, fit_unit_scales=not args.no_unit_scales)
    for w in normalizer.warnings:
        print(f"⚠️  {w}")
    if args.out:
        write_json(normalizer, args.out)
    else:
        sys.stdout.write(dumps_report(normalizer))
    print(f"✅ Fitted {len(normalizer.classes)} units classes on {len(frame)} rows", file=sys.stderr)
    return EXIT_OK


def cmd_normalize_apply(args) -> int:
    normalizer = Normalizer.load(_require_file(args.normalizer, "--normalizer"))
    frame = pd.read_csv(_require_file(args.data, "--data"))
    out = apply_normalizer(normalizer, frame)
    if args.out:
        write_csv(out, args.out)
        print(f"✅ Normalized {len(out)} rows -> {args.out}")
    else:
        sys.stdout.write(out.to_csv(index=False, float_format="%.17g", lineterminator="\n"))
    return EXIT_OK


# ===============================
# audit
# ===============================


def cmd_audit_lint(args) -> int:
    schema = FeatureSchema.load(_require_file(args.schema, "--schema"))
    pipe = PipelineDesc.load(_require_file(args.pipeline, "--pipeline"))
    diagnostics = lint_pipeline(schema, pipe)
    for d in diagnostics:
        icon = "❌" if d.severity == "error" else "⚠️ "
        where = f"step {d.step}" if d.step is not None else "pipeline"
        print(f"{icon} {d.rule} [{where}] {d.message}")
    errors = [d for d in diagnostics if d.severity == "error"]
    if args.out:
        write_json({"diagnostics": [d.to_json() for d in diagnostics], "errors": len(errors)}, args.out)
    if errors:
        print(f"❌ {len(errors)} error(s), {len(diagnostics) - len(errors)} warning(s)")
        return EXIT_AUDIT
    print(f"✅ No errors ({len(diagnostics)} warning(s))")
    return EXIT_OK


def cmd_audit_covtest(args) -> int:
    model = load_model(_require_file(args.model, "--model"))
    schema = FeatureSchema.load(_require_file(args.schema, "--schema")) if args.schema else None
    output_dim = parse_units(args.output_dim) if args.output_dim else None
    fn, in_schema, out_schema, defaults = model_function(model, schema, output_dim)
    if args.data:
        probes = probes_from_frame(pd.read_csv(_require_file(args.data, "--data")), in_schema, defaults, args.probes)
    else:
        probes = random_probes(in_schema, args.probes, args.seed, defaults)
    spec = CovarianceTestSpec(
        group=args.group,
        trials=args.trials,
        seed=args.seed,
        tolerance=args.tol,
        transform=tuple(args.transform) if args.transform else None,
        axis=tuple(args.axis),
    )
    report = test_covariance(fn, spec, in_schema, probes, output_schema=out_schema)
    if args.out:
        write_json(report, args.out)
    if not report.self_check_passed:
        print(f"⚠️  Harness self-check deviation {report.self_check_deviation:.3g} exceeds tolerance")
    if report.passed:
        print(f"✅ {spec.group} covariance holds: max deviation {report.max_deviation:.3g} <= {spec.tolerance:g}")
        return EXIT_OK
    print(f"❌ {spec.group} covariance broken: max deviation {report.max_deviation:.3g} > {spec.tolerance:g}")
    return EXIT_AUDIT


# ===============================
# exp
# ===============================


def _profile(args, experiment: str) -> dict:
    config_file = args.config or DEFAULT_CONFIG_FILE
    name = args.profile or f"{experiment}_default"
    profile = load_config(_require_file(config_file, "--config"), name)
    kind = profile.get("experiment", experiment)
    if kind != experiment:
        raise ConfigError(f"Profile is for the {kind} experiment, not {experiment}")
    print(f"📋 Using configuration: '{name}' from {config_file}", file=sys.stderr)
    return profile


def _outputs(args, profile: dict) -> dict:
    """Flags override the profile's output section."""
    output = dict(profile.get("output", {}))
    unknown = set(output) - {"out", "svg", "xlsx", "save_models"}
    if unknown:
        raise ConfigError(f"Unknown output settings {sorted(unknown)}")
    for key in ("out", "svg", "xlsx", "save_models"):
        value = getattr(args, key)
        if value:
            output[key] = value
    return output


def _train_config(profile: dict, seed: Optional[int]) -> TrainConfig:
    cfg = TrainConfig.from_dict(profile.get("train"))
    return cfg.replace(seed=seed) if seed is not None else cfg


def _finish(report_json: dict, tables: Dict[str, pd.DataFrame], models: Dict[str, object], output: dict) -> None:
    out = output.get("out")
    if out:
        write_json(report_json, out)
        for suffix, frame in tables.items():
            write_csv(frame, sibling_path(out, f"_{suffix}.csv"))
    else:
        sys.stdout.write(dumps_report(report_json))
    if output.get("xlsx"):
        write_workbook(tables, output["xlsx"])
    if output.get("save_models"):
        for name, model in models.items():
            save_model(model, os.path.join(output["save_models"], f"{name}.json"))


def cmd_exp_blackbody(args) -> int:
    profile = _profile(args, "blackbody")
    data = dict(profile.get("data", {}))
    if args.seed is not None:
        data["seed"] = args.seed
    cfg = BlackbodyConfig.from_dict(data)
    search_cfg = SearchConfig.from_dict(profile.get("search"))
    output = _outputs(args, profile)

    report = run_blackbody_experiment(cfg, _train_config(profile, args.seed), search_cfg)

    histories = {name: getattr(m, "loss_history", []) for name, m in report.models.items() if m is not None}
    loss = pd.concat(
        [loss_history_frame(h).assign(model=name) for name, h in histories.items() if len(h)] or [pd.DataFrame()],
        ignore_index=True,
    )
    mse = pd.DataFrame({"model": list(report.test_mse), "test_log_mse": list(report.test_mse.values())})
    _finish(report.to_json(), {"scores": report.search.table, "test_mse": mse, "loss": loss}, report.models, output)
    if output.get("svg"):
        series = {name: (range(1, len(h) + 1), h) for name, h in histories.items() if len(h)}
        write_line_plot(series, output["svg"], "Blackbody training loss", "epoch", "log-intensity MSE", log_y=True)

    search = report.search
    for name, value in report.test_mse.items():
        print(f"📊 {name}: test log-MSE {value:.4g}")
    if search.constant_needed:
        print(f"✅ Constant {format_dimension(search.best_dim)} "
              f"with magnitude {search.best_magnitude:.4g} (reference {report.reference.value:.4g})")
    else:
        print("⚠️  No dimensional constant improves on the constant-free model")
    return EXIT_OK


def cmd_exp_pendulum(args) -> int:
    profile = _profile(args, "pendulum")
    settings = {**profile.get("data", {}), **profile.get("models", {})}
    if args.seed is not None:
        settings["seed"] = args.seed
    cfg = PendulumExperimentConfig.from_dict(settings)
    output = _outputs(args, profile)

    report = run_pendulum_experiment(cfg, _train_config(profile, args.seed))

    summary = pd.DataFrame(
        {
            "model": list(report.mean_rel_err),
            "mean_state_rel_err": list(report.mean_rel_err.values()),
            "covariance_max_deviation": [report.covariance[m]["max_deviation"] for m in report.mean_rel_err],
            "status": ["passed" if report.covariance[m]["passed"] else "failed" for m in report.mean_rel_err],
        }
    )
    _finish(report.to_json(), {"curves": report.curves, "summary": summary}, report.models, output)
    if output.get("svg"):
        series = {m: (report.curves["dt"], report.curves[m]) for m in report.mean_rel_err}
        write_line_plot(series, output["svg"], "Pendulum prediction error", "time offset", "mean State.RelErr", log_y=True)

    for _, row in summary.iterrows():
        icon = "✅" if row["status"] == "passed" else "❌"
        print(f"{icon} {row['model']}: mean State.RelErr {row['mean_state_rel_err']:.4g}, "
              f"O(3) deviation {row['covariance_max_deviation']:.3g}")
    if report.axis_angle is not None:
        print(f"🧭 Learned vector at {report.axis_angle:.4g} rad from the gravity axis")
    return EXIT_OK


def cmd_exp_list(args) -> int:
    config_file = args.config or DEFAULT_CONFIG_FILE
    names = get_available_configs(config_file)
    print(f"📋 {config_file}:")
    for name in names:
        print(f"   - {name}")
    return EXIT_OK


# ===============================
# parser
# ===============================


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="symlab", description="Units- and rotation-covariant modelling toolkit.")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    groups = parser.add_subparsers(dest="group", required=True, parser_class=_Parser)

    dim = groups.add_parser("dim", help="dimensional analysis").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = dim.add_parser("solve", help="exponents reaching a target Dimension")
    p.add_argument("--inputs", nargs="+", required=True, metavar="NAME:UNITS")
    p.add_argument("--target", required=True, metavar="UNITS")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dim_solve)
    p = dim.add_parser("pi", help="basis of dimensionless combinations")
    p.add_argument("--inputs", nargs="+", required=True, metavar="NAME:UNITS")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dim_pi)

    norm = groups.add_parser("normalize", help="units-covariant normalization").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = norm.add_parser("fit", help="fit a normalizer")
    p.add_argument("--schema", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--no-unit-scales", action="store_true", help="skip the base-unit scale fit")
    p.set_defaults(func=cmd_normalize_fit)
    p = norm.add_parser("apply", help="apply a fitted normalizer")
    p.add_argument("--normalizer", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_normalize_apply)

    aud = groups.add_parser("audit", help="pipeline lint and covariance tests").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = aud.add_parser("lint", help="lint a pipeline description")
    p.add_argument("--schema", required=True)
    p.add_argument("--pipeline", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit_lint)
    p = aud.add_parser("covtest", help="test a saved model for covariance")
    p.add_argument("--model", required=True)
    p.add_argument("--schema", help="feature schema (required for plain MLPs)")
    p.add_argument("--data", help="CSV of probe rows (default: random probes)")
    p.add_argument("--group", choices=GROUPS, default="O3")
    p.add_argument("--trials", type=int, default=32)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--probes", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--axis", type=float, nargs=3, default=(0.0, 0.0, 1.0), metavar=("X", "Y", "Z"))
    p.add_argument("--transform", nargs="+", metavar="FEATURE", help="only these inputs move")
    p.add_argument("--output-dim", help="units of a plain MLP's output")
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit_covtest)

    exp = groups.add_parser("exp", help="experiments").add_subparsers(dest="action", required=True, parser_class=_Parser)
    for name, func in (("blackbody", cmd_exp_blackbody), ("pendulum", cmd_exp_pendulum)):
        p = exp.add_parser(name, help=f"{name} experiment")
        p.add_argument("--config", help=f"profile file (default {os.path.relpath(DEFAULT_CONFIG_FILE)})")
        p.add_argument("--profile", help=f"profile name (default {name}_default)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--svg")
        p.add_argument("--xlsx")
        p.add_argument("--save-models", dest="save_models", metavar="DIR")
        p.set_defaults(func=func)
    p = exp.add_parser("list", help="list available profiles")
    p.add_argument("--config")
    p.set_defaults(func=cmd_exp_list)
    return parser


def parse_and_dispatch(argv: Optional[List[str]] = None) -> int:
    """Run one command and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        return args.func(args)
    except (UsageError, FileNotFoundError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except SymmetryLabError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_DOMAIN


def main() -> None:
    load_dotenv()
    level = os.getenv(LOG_LEVEL_ENV, "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(levelname)s %(name)s: %(message)s")
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
