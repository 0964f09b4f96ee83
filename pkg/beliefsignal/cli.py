"""
CLI Entrypoint for beliefsignal.
"""

import argparse
import os
import sys

from dotenv import load_dotenv
from loguru import logger

from .config import DEFAULT_CONFIG, DEFAULT_OUT, config_violations, load_experiment
from .controllers import ControllerEntry
from .errors import ConfigError
from .harness import report, run_experiment

# Load .env if present
load_dotenv()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Belief-space signal control testbed")
    parser.add_argument(
        "--log-level",
        default=os.getenv("BELIEFSIGNAL_LOG_LEVEL", "WARNING"),
        help="Log level for library messages on stderr",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    validate = sub.add_parser("validate", help="Check an experiment and its intersection")
    _add_config(validate)

    run = sub.add_parser("run", help="Run every controller x scenario x trial cell")
    _add_config(run)
    run.add_argument("--out", default=os.getenv("BELIEFSIGNAL_OUT"), help="Output directory")
    run.add_argument("--seed", type=int, help="Master seed (overrides the config)")
    run.add_argument(
        "--controller",
        action="append",
        help="Controller entry, e.g. csmpc or csmpc:no-hold,no-ema (repeatable)",
    )
    run.add_argument("--scenario", action="append", help="Scenario name to run (repeatable)")
    run.add_argument("--trials", type=int, help="Trials per scenario (overrides the config)")
    run.add_argument("--trace", action="store_true", help="Dump decision traces per episode")
    run.add_argument(
        "--workers",
        type=int,
        default=int(os.getenv("BELIEFSIGNAL_WORKERS", "0")) or None,
        help="Parallel episodes",
    )

    rep = sub.add_parser("report", help="Write tables and series from a finished run")
    rep.add_argument(
        "--out", default=os.getenv("BELIEFSIGNAL_OUT", DEFAULT_OUT), help="Run directory"
    )

    args = parser.parse_args(argv)
    logger.remove()
    logger.add(sys.stderr, level=args.log_level.upper())

    if args.command == "report":
        try:
            path = report(args.out)
        except FileNotFoundError as e:
            print(f"Report Error: {e}")
            return 1
        print(f"Report written to {path}")
        return 0

    try:
        experiment, intersection = load_experiment(args.config)
        if args.command == "run":
            experiment = _apply_overrides(experiment, args)
    except ConfigError as e:
        print(f"Configuration Error: {e}")
        return 1

    violations = config_violations(experiment, intersection)
    for violation in violations:
        print(f"  [INVALID] {violation}")
    if violations:
        return 1
    if args.command == "validate":
        print(f"{args.config} is valid.")
        return 0

    cells = sum(s.trials for s in experiment.scenarios) * len(experiment.controllers)
    print(f"Running {cells} episodes into {args.out or experiment.out_dir}...")
    summary = run_experiment(
        experiment, intersection, out_dir=args.out, workers=args.workers, trace=args.trace or None
    )
    for failure in summary["failures"]:
        print(f"  [FAILED] {failure['controller']} {failure['scenario']} trial {failure['trial']}")
    print(f"Done: {len(summary['cells']) - len(summary['failures'])}/{len(summary['cells'])} ok.")
    return 1 if summary["failures"] else 0


# Helpers


def _add_config(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        default=os.getenv("BELIEFSIGNAL_CONFIG", DEFAULT_CONFIG),
        help="Experiment JSON document",
    )


def _apply_overrides(experiment, args):
    updates: dict = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.controller:
        updates["controllers"] = tuple(ControllerEntry.parse(text) for text in args.controller)
    scenarios = experiment.scenarios
    if args.scenario:
        scenarios = tuple(s for s in scenarios if s.label in args.scenario)
        if not scenarios:
            raise ConfigError(f"no scenario named {', '.join(args.scenario)}")
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("--trials must be at least 1")
        scenarios = tuple(s.model_copy(update={"trials": args.trials}) for s in scenarios)
    updates["scenarios"] = scenarios
    return experiment.model_copy(update=updates)


if __name__ == "__main__":
    sys.exit(main())
