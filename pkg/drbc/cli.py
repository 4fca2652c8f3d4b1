"""Command line entry point `drbc`."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from drbc.config import ExperimentConfig, config_from_mapping, read_config_file
from drbc.const import DrbcEvent, ExperimentKind
from drbc.exceptions import DrbcConfigException, DrbcException
from drbc.experiments import ExperimentRunner, PropertyCheck

__all__ = ["EXIT_OK", "EXIT_PROPERTY_FAILED", "EXIT_CONFIG_ERROR", "build_parser", "main"]

_LOGGER = logging.getLogger(__name__)

"""Every asserted property holds."""
EXIT_OK = 0

"""At least one asserted property failed, or the run itself failed."""
EXIT_PROPERTY_FAILED = 1

"""The configuration was rejected."""
EXIT_CONFIG_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser."""
    parser = argparse.ArgumentParser(
        prog="drbc",
        description="Distributionally robust Bayesian control experiments.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run one experiment and write its reports")
    run.add_argument("experiment", choices=[str(kind) for kind in ExperimentKind])
    run.add_argument("--config", type=Path, help="YAML configuration file")
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--out", type=Path, help="report directory")
    run.add_argument(
        "--full",
        action="store_true",
        default=None,
        help="use the published scale instead of the desk scale",
    )
    run.add_argument("--workers", type=int, help="worker threads for replications")
    run.add_argument("--replications", type=int, help="number of replications")
    run.add_argument("--verbose", action="store_true", help="log debug output")
    return parser


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    data = read_config_file(args.config) if args.config else {}
    if data.get("experiment", args.experiment) != args.experiment:
        raise DrbcConfigException(
            f"Config file is for {data['experiment']!r}, not {args.experiment!r}"
        )
    data["experiment"] = args.experiment
    overrides = {
        "seed": args.seed,
        "output": None if args.out is None else str(args.out),
        "full": args.full,
        "workers": args.workers,
        "replications": args.replications,
    }
    data.update({key: value for key, value in overrides.items() if value is not None})
    return config_from_mapping(data)


def _log_property(check: PropertyCheck) -> None:
    level = logging.INFO if check.passed else logging.ERROR
    _LOGGER.log(
        level, "%s %s: %s", "PASS" if check.passed else "FAIL", check.name, check.detail
    )


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line interface.

    Args:
        argv (Sequence[str] | None, optional): Arguments without the program name. Defaults to sys.argv[1:].

    Returns:
        int: The exit status.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        config = _resolve_config(args)
    except DrbcConfigException as ex:
        _LOGGER.error("Invalid configuration: %s", ex)
        return EXIT_CONFIG_ERROR

    runner = ExperimentRunner(config)
    runner.register_callback(DrbcEvent.PROPERTY_CHECKED, _log_property)
    try:
        result = runner.run()
    except DrbcException:
        _LOGGER.exception("Experiment %s failed", config.experiment)
        return EXIT_PROPERTY_FAILED

    runner.write_reports(result)
    return EXIT_OK if result.passed else EXIT_PROPERTY_FAILED


if __name__ == "__main__":
    sys.exit(main())
