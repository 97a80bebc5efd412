"""Command-line entry point."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from doob_meyer.doob import NotSubmartingaleError
from doob_meyer.filtered_space import SpaceError
from doob_meyer.instance import InstanceError
from doob_meyer.komlos import ExtractionError
from doob_meyer.processes import NotAdaptedError

from .config import EXPERIMENT_NAMES, GENERATORS, ConfigError, ExperimentConfig, threads_from_env
from .experiments import run
from .reports import write_reports

logger = logging.getLogger(__name__)

INPUT_ERRORS = (
    ConfigError,
    InstanceError,
    SpaceError,
    NotAdaptedError,
    NotSubmartingaleError,
    FileNotFoundError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dm-lab", description="Doob-Meyer decomposition experiments")
    parser.add_argument("experiment", choices=EXPERIMENT_NAMES)
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--config", type=Path, help="JSON experiment config")
    source.add_argument("--instance", type=Path, help="JSON instance file")
    source.add_argument("--generator", choices=GENERATORS, help="instance generator")
    parser.add_argument("--depth", type=int, help="master depth of a generated instance")
    parser.add_argument("--seed", type=int, help="generator seed")
    parser.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    parser.add_argument("--out", type=Path, help="report directory (default: reports)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """The config file when given, otherwise one built from flags; flags win."""
    if args.config is not None:
        config = ExperimentConfig.from_file(args.config, experiment=args.experiment)
        return config.with_overrides(depth=args.depth, seed=args.seed, out=args.out)
    return ExperimentConfig(
        experiment=args.experiment,
        generator=None if args.instance is not None else args.generator or "ground_truth",
        instance=args.instance,
        seed=args.seed,
        seeds=args.seeds,
        depth=args.depth,
        out=args.out if args.out is not None else Path("reports"),
    )


def main(argv: Sequence[str] | None = None) -> int:
    """Run one experiment; returns 0 on success, 1 on a failed check, 2 on bad input."""
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(
        level=level,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )

    try:
        config = load_config(args)
        max_workers = threads_from_env()
        result = run(config, max_workers=max_workers)
    except INPUT_ERRORS as e:
        print(f"dm-lab: error: {e}", file=sys.stderr)
        return 2
    except ExtractionError as e:
        print(f"dm-lab: {args.experiment} failed: {e}", file=sys.stderr)
        return 1

    for path in write_reports(config.out, result.reports):
        print(path.as_posix())
    if result.failures:
        print(f"dm-lab: {result.name} failed: {result.failures[0]}", file=sys.stderr)
        if len(result.failures) > 1:
            logger.warning("%d more failures", len(result.failures) - 1)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
