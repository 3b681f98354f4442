"""
Command-line front end.

Configuration is resolved per command as preset defaults < JSON config file
(`--config`) < explicit flags; the resolved RunConfig records where every
field came from.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from robust_qr.core import experiments
from robust_qr.core.artifacts import dump_json, render_summary
from robust_qr.core.preflight import validate_run_preflight
from robust_qr.exceptions import (
    EXIT_CONFIG_ERROR,
    EXIT_DATA_ERROR,
    EXIT_NUMERICAL_FAILURE,
    EXIT_OK,
    EXIT_OUTPUT_ERROR,
    DataError,
    DimensionMismatchError,
    InvalidConfigurationError,
    NumericalFailureError,
    OutputPathError,
)
from robust_qr.log import setup_logging
from robust_qr.models import DEFAULT_ALPHAS, WIDE_ALPHAS, MethodEnum, RunConfig, SyntheticSpec

ALPHA_PRESETS = {
    "default": DEFAULT_ALPHAS,
    "low-mid-high": WIDE_ALPHAS,
}

# RunConfig field -> flag, where the flag is not simply --field-name
FIELD_FLAGS = {
    "csv_path": "--data",
    "methods": "--method",
    "learning_rate": "--lr",
    "final_learning_rate": "--final-lr",
    "has_header": "--no-header",
    "asset_path": "--asset",
    "synthetic": "--n/--outlier-fraction/--noise-scale",
}

SYNTHETIC_FLAGS = {
    "n": "n",
    "outlier_fraction": "outlier_fraction",
    "outlier_magnitude": "outlier_magnitude",
    "outlier_side": "outlier_side",
    "noise_scale": "noise_scale",
    "heteroscedastic": "heteroscedastic",
    "data_seed": "seed",
}

# argparse dests that are not RunConfig fields
CONTROL_DESTS = {"command", "config", "print_config", "log_dir", "verbose"}


def parse_float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected comma-separated numbers, got '{text}'.")


def parse_alphas(text: str) -> list[float]:
    if text in ALPHA_PRESETS:
        return list(ALPHA_PRESETS[text])
    return parse_float_list(text)


def parse_methods(text: str) -> list[str]:
    if text == "all":
        return [method.value for method in MethodEnum]
    names = [part.strip() for part in text.split(",") if part.strip()]
    valid = {method.value for method in MethodEnum}
    unknown = [name for name in names if name not in valid]
    if unknown:
        raise argparse.ArgumentTypeError(
            f"Unknown method(s) {unknown}; choose from {sorted(valid)} or 'all'."
        )
    return names


def parse_columns(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _add_shared_arguments(sp: argparse.ArgumentParser):
    # SUPPRESS keeps unset flags out of the namespace so file values survive.
    s = argparse.SUPPRESS

    general = sp.add_argument_group("run")
    general.add_argument("--config", default=None, help="JSON file with RunConfig fields")
    general.add_argument("--print-config", action="store_true", help="Print the resolved configuration and exit")
    general.add_argument("--out-dir", dest="out_dir", default=s, help="Output directory for artifacts")
    general.add_argument("--overwrite", action=argparse.BooleanOptionalAction, default=s,
                         help="Replace the artifacts of a previous run in --out-dir")
    general.add_argument("--emit-plot-data", dest="emit_plot_data", action=argparse.BooleanOptionalAction,
                         default=s, help="Write prediction curves as CSV")
    general.add_argument("--seed", type=int, default=s, help="Training seed")
    general.add_argument("--workers", type=int, default=s, help="Parallel grid cells")
    general.add_argument("--log-dir", dest="log_dir", default=None, help="Directory for robustqr.log")
    general.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    model = sp.add_argument_group("model and training")
    model.add_argument("--method", dest="methods", type=parse_methods, default=s,
                       help="Comma-separated methods (qr,tqr,rcp,beta_qr) or 'all'")
    model.add_argument("--alphas", type=parse_alphas, default=s,
                       help="Comma-separated quantile levels, 'default' (0.25,0.5,0.75) or 'low-mid-high' (0.05,0.5,0.95)")
    model.add_argument("--architecture", choices=["linear", "mlp"], default=s)
    model.add_argument("--hidden-width", dest="hidden_width", type=int, default=s)
    model.add_argument("--depth", type=int, default=s, help="Number of layers of the ReLU network")
    model.add_argument("--epochs", type=int, default=s)
    model.add_argument("--batch-size", dest="batch_size", type=int, default=s, help="Mini-batch size (default: full batch)")
    model.add_argument("--lr", dest="learning_rate", type=float, default=s, help="ADAM learning rate")
    model.add_argument("--final-lr", dest="final_learning_rate", type=float, default=s,
                       help="Learning rate reached by the last epoch through geometric decay")
    model.add_argument("--convergence-tol", dest="convergence_tol", type=float, default=s)
    model.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=s,
                       help="z-score features and responses before training")
    model.add_argument("--n-starts", dest="n_starts", type=int, default=s,
                       help="Candidate inits per quantile level; the lowest objective after --start-epochs continues")
    model.add_argument("--start-epochs", dest="start_epochs", type=int, default=s)
    model.add_argument("--beta", type=float, default=s, help="beta-QR robustness parameter")
    model.add_argument("--sigma", type=float, default=s, help="beta-QR residual scale")
    model.add_argument("--warm-start", dest="warm_start", action=argparse.BooleanOptionalAction, default=s,
                       help="Start beta-QR from the trimmed fit (needs --trim-fraction or --trim-count)")
    model.add_argument("--lambda", dest="lambda", type=float, default=s, help="RCP L1 penalty on the shifts")
    model.add_argument("--gamma-lr", dest="gamma_lr", type=float, default=s, help="RCP proximal step size")
    model.add_argument("--outer-iters", dest="outer_iters", type=int, default=s, help="RCP outer rounds")
    model.add_argument("--inner-steps", dest="inner_steps", type=int, default=s, help="RCP ADAM steps per round")
    model.add_argument("--trim-fraction", dest="trim_fraction", type=float, default=s, help="TQR kept fraction C/N")
    model.add_argument("--trim-count", dest="trim_count", type=int, default=s, help="TQR kept count C")

    data = sp.add_argument_group("data")
    data.add_argument("--source", choices=["bundled", "csv", "synthetic"], default=s)
    data.add_argument("--data", dest="csv_path", default=s, help="CSV dataset (implies --source csv)")
    data.add_argument("--asset", dest="asset_path", default=s, help="Star-cluster CSV to use instead of the bundled copy")
    data.add_argument("--x-columns", dest="x_columns", type=parse_columns, default=s)
    data.add_argument("--y-column", dest="y_column", default=s)
    data.add_argument("--inlier-column", dest="inlier_column", default=s)
    data.add_argument("--no-header", dest="has_header", action="store_false", default=s)
    data.add_argument("--n", type=int, default=s, help="Synthetic sample size")
    data.add_argument("--outlier-fraction", dest="outlier_fraction", type=float, default=s)
    data.add_argument("--outlier-magnitude", dest="outlier_magnitude", type=float, default=s)
    data.add_argument("--outlier-side", dest="outlier_side", choices=["both", "up", "down"], default=s,
                      help="Direction of the synthetic outliers")
    data.add_argument("--noise-scale", dest="noise_scale", type=float, default=s)
    data.add_argument("--heteroscedastic", action=argparse.BooleanOptionalAction, default=s)
    data.add_argument("--data-seed", dest="data_seed", type=int, default=s, help="Synthetic generator seed")
    data.add_argument("--clean-test-size", dest="clean_test_size", type=int, default=s,
                      help="Rows of the outlier-free synthetic set coverage is measured on")

    grid = sp.add_argument_group("grid search")
    grid.add_argument("--beta-grid", dest="beta_grid", type=parse_float_list, default=s)
    grid.add_argument("--lambda-grid", dest="lambda_grid", type=parse_float_list, default=s)
    grid.add_argument("--trim-grid", dest="trim_grid", type=parse_float_list, default=s)
    grid.add_argument("--val-fraction", dest="val_fraction", type=float, default=s)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustqr",
        description="Robust quantile regression: beta-QR, trimmed QR and case-specific-parameter QR.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    commands = {
        "star-cluster": "Four methods plus the outlier-free reference on the bundled CYG OB1 stars",
        "toy": "Four methods on the contaminated x*sin(x) dataset with a three-layer ReLU network",
        "fit": "Fit the chosen method(s) on a dataset",
        "grid": "Grid search of beta, lambda and trim fraction by validation pinball loss",
        "gen-data": "Write the synthetic dataset to CSV",
    }
    for name, help_text in commands.items():
        _add_shared_arguments(sub.add_parser(name, help=help_text, description=help_text))
    return parser


def _flag_for(field: str) -> str:
    return FIELD_FLAGS.get(field, "--" + field.rstrip("_").replace("_", "-"))


def _format_validation_error(exc: ValidationError) -> str:
    messages = []
    for error in exc.errors():
        location = [str(part) for part in error["loc"]]
        field = location[0] if location else ""
        flag = _flag_for(field) if field else "configuration"
        messages.append(f"{flag} ({'.'.join(location) or 'config'}): {error['msg']}")
    return "; ".join(messages)


def _read_config_file(path: str) -> dict:
    config_path = Path(path)
    if not config_path.is_file():
        raise InvalidConfigurationError(f"Config file not found: {config_path}")
    try:
        values = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidConfigurationError(f"Config file {config_path} is not valid JSON: {exc}") from exc
    if not isinstance(values, dict):
        raise InvalidConfigurationError(f"Config file {config_path} must hold a JSON object.")
    values.pop("provenance", None)
    values.pop("command", None)
    return values


def _field_key(name: str) -> str:
    field = RunConfig.model_fields[name]
    return field.alias or name


def resolve_run_config(command: str, args: argparse.Namespace) -> RunConfig:
    """
    Merge preset defaults, the --config file and explicit flags into a RunConfig.

    Raises:
        InvalidConfigurationError: On an unreadable config file or invalid values,
            naming the offending flag.
    """
    values = dict(experiments.PRESETS[command])
    origin = {key: "default" for key in values}

    config_file = getattr(args, "config", None)
    if config_file:
        file_values = _read_config_file(config_file)
        unknown = sorted(set(file_values) - {_field_key(name) for name in RunConfig.model_fields} - {"lambda_"})
        if unknown:
            raise InvalidConfigurationError(f"Unknown keys in {config_file}: {unknown}")
        if "lambda_" in file_values:
            file_values["lambda"] = file_values.pop("lambda_")
        values.update(file_values)
        origin.update({key: "file" for key in file_values})

    flags = {key: value for key, value in vars(args).items() if key not in CONTROL_DESTS}

    synthetic_flags = {SYNTHETIC_FLAGS[key]: flags.pop(key) for key in list(flags) if key in SYNTHETIC_FLAGS}
    if synthetic_flags:
        base = values.get("synthetic") or SyntheticSpec().model_dump(mode="json")
        values["synthetic"] = {**base, **synthetic_flags}
        origin["synthetic"] = "flag"
        if "source" not in flags and "csv_path" not in flags:
            flags["source"] = "synthetic"

    if "csv_path" in flags and "source" not in flags:
        flags["source"] = "csv"

    values.update(flags)
    origin.update({key: "flag" for key in flags})
    values["command"] = command

    provenance = {}
    for name in RunConfig.model_fields:
        if name in ("command", "provenance"):
            continue
        key = _field_key(name)
        provenance[key] = origin.get(key, "default")
    values["provenance"] = provenance

    # Choosing another source drops the preset's synthetic spec.
    if values.get("source") != "synthetic" and origin.get("synthetic") == "default":
        values.pop("synthetic", None)

    try:
        return RunConfig.model_validate(values)
    except ValidationError as exc:
        raise InvalidConfigurationError(_format_validation_error(exc)) from exc


def _print_outcome(outcome: experiments.ExperimentOutcome):
    if outcome.report is not None:
        print(render_summary(outcome.report))
        return
    for fit in outcome.fits:
        for alpha, quantile_fit in fit.fits.items():
            print(f"{fit.method.value}\talpha={alpha:g}\tfinal_loss={quantile_fit.final_loss:.6g}")


def _run_preset(run: RunConfig) -> int:
    _print_outcome(experiments.run_experiment(run))
    return EXIT_OK


def cmd_star_cluster(run: RunConfig) -> int:
    return _run_preset(run)


def cmd_toy(run: RunConfig) -> int:
    return _run_preset(run)


def cmd_fit(run: RunConfig) -> int:
    return _run_preset(run)


def cmd_grid(run: RunConfig) -> int:
    outcome = experiments.run_grid(run)
    print(outcome.table[outcome.table["rank"] == 1].to_string(index=False))
    for method, cell in outcome.best.items():
        print(f"best {method.value}: {outcome.out_dir / f'best_{method.value}.json'}")
    return EXIT_OK


def cmd_gen_data(run: RunConfig) -> int:
    print(experiments.generate_data(run))
    return EXIT_OK


COMMANDS = {
    "star-cluster": cmd_star_cluster,
    "toy": cmd_toy,
    "fit": cmd_fit,
    "grid": cmd_grid,
    "gen-data": cmd_gen_data,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(log_dir=args.log_dir, log_level=logging.DEBUG if args.verbose else logging.INFO)

    try:
        run = resolve_run_config(args.command, args)
        if args.print_config:
            print(dump_json(run.model_dump(mode="json", by_alias=True)), end="")
            return EXIT_OK
        if args.command != "gen-data":
            validate_run_preflight(run).raise_for_blockers()
        return COMMANDS[args.command](run)
    except (InvalidConfigurationError, DimensionMismatchError) as e:
        logging.error(f"Configuration error: {e}")
        return EXIT_CONFIG_ERROR
    except DataError as e:
        logging.error(f"Data error: {e}")
        return EXIT_DATA_ERROR
    except NumericalFailureError as e:
        logging.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL_FAILURE
    except OutputPathError as e:
        logging.error(f"Output error: {e}")
        return EXIT_OUTPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
