"""
Command line entry point: ``hyperfedsim run|resume|plot``.
"""
import argparse
import logging
import sys
from dataclasses import replace
from typing import List, Optional

from HyperFedSim import HyperFedSimulator
from HyperFedSim.config import parse_config
from HyperFedSim.exceptions import HyperFedSimError
from HyperFedSim.plotting import write_plot
from HyperFedSim.utils import LOGGER

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyperfedsim", description=__doc__)
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: INFO).",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run an experiment from a JSON config.")
    run.add_argument("config", help="Path to the run configuration.")
    run.add_argument("--seed", type=int, default=None, help="Override the master seed.")
    run.add_argument("--workers", type=int, default=None, help="Client training threads.")
    run.add_argument("--dry-run", action="store_true", help="Print the planned phases and exit.")

    resume = commands.add_parser("resume", help="Continue a run from its checkpoint directory.")
    resume.add_argument("checkpoint", help="Checkpoint directory of an earlier run.")
    resume.add_argument("--workers", type=int, default=None, help="Client training threads.")

    plot = commands.add_parser("plot", help="Describe (and draw) accuracy curves from a metrics CSV.")
    plot.add_argument("csv", help="Metrics CSV written by a run.")
    plot.add_argument("--output", default=None, help="Where to write the chart description.")
    return parser


def _run(args: argparse.Namespace) -> int:
    config = parse_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    simulator = HyperFedSimulator(config, workers=args.workers)
    if args.dry_run:
        for line in simulator.dry_run():
            print(line)
        return EXIT_OK
    with simulator:
        accuracy = simulator.run()
    _report(accuracy)
    return EXIT_OK


def _resume(args: argparse.Namespace) -> int:
    with HyperFedSimulator.from_checkpoint(args.checkpoint, workers=args.workers) as simulator:
        accuracy = simulator.run()
    _report(accuracy)
    return EXIT_OK


def _plot(args: argparse.Namespace) -> int:
    description, image = write_plot(args.csv, args.output)
    print(description)
    if image is not None:
        print(image)
    return EXIT_OK


def _report(accuracy: Optional[float]) -> None:
    if accuracy is None:
        print("final mean accuracy: n/a")
    else:
        print(f"final mean accuracy: {accuracy:.4f}")


COMMANDS = {"run": _run, "resume": _resume, "plot": _plot}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except HyperFedSimError as excep:
        LOGGER.debug("Run failed", exc_info=True)
        print(f"error: {excep}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as excep:  # pylint: disable=broad-except
        LOGGER.exception("Unexpected failure: %s", excep)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
