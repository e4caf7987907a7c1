"""
Command-line entry point.

    splitting run <config.json> [--out DIR] [--threads N] [--temporal]
    splitting list
    splitting sweep <config.json> --seeds 1,2,3 [--out DIR] [--threads N]

Diagnostics go to stderr through logging; output paths and criterion tables go to stdout.
Exit codes: 0 all criteria pass, 1 a criterion failed, 2 invalid config or a library error
(nothing is written in that case).
"""

import argparse
import asyncio
import logging
import sys
import uuid
from typing import Sequence

from temporalio.client import WorkflowFailureError
from temporalio.exceptions import ApplicationError

from shared.config import SPLITTING_LOG_LEVEL, TEMPORAL_TASK_QUEUE, get_temporal_client
from src.errors import SplittingError
from src.experiments import ExperimentConfig, ExperimentResult, list_experiments, load_config
from src.harness import output_directory, run_experiment, seed_sweep, write_outputs

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_CRITERION_FAILED = 1
EXIT_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splitting", description="Run stochastic splitting experiments.")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run one experiment config.")
    run.add_argument("config", help="Path to the experiment JSON config.")
    run.add_argument("--out", help="Output directory (default: config output_dir or SPLITTING_OUTPUT_DIR/<experiment>-seed<seed>).")
    run.add_argument("--threads", type=int, default=None, help="Worker threads; capped by SPLITTING_MAX_THREADS.")
    run.add_argument("--temporal", action="store_true", help="Run through the Temporal worker instead of in-process.")

    commands.add_parser("list", help="List experiment kinds, what they exercise and their parameters.")

    sweep = commands.add_parser("sweep", help="Run one config for several seeds and aggregate the criteria.")
    sweep.add_argument("config", help="Path to the experiment JSON config.")
    sweep.add_argument("--seeds", required=True, help="Comma-separated seeds, e.g. 1,2,3.")
    sweep.add_argument("--out", help="Sweep root directory.")
    sweep.add_argument("--threads", type=int, default=None, help="Worker threads; capped by SPLITTING_MAX_THREADS.")
    return parser


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")
    if any(seed < 0 for seed in seeds):
        raise argparse.ArgumentTypeError("seeds must be nonnegative")
    return seeds


def _print_criteria(criteria: list[dict]) -> None:
    for entry in criteria:
        verdict = "PASS" if entry["pass"] else "FAIL"
        print(f"{verdict}  {entry['experiment']}: {entry['criterion']}  measured={entry['measured']}  tolerance={entry['tolerance']}")


async def run_on_temporal(config: ExperimentConfig, out: str) -> dict:
    """Execute the experiment workflow and wait for its result."""
    from src.workflows import ExperimentWorkflow

    client = await get_temporal_client()
    workflow_id = f"splitting-{config.experiment}-seed{config.master_seed}-{uuid.uuid4()}"
    logger.info(f"Starting workflow {workflow_id} on {TEMPORAL_TASK_QUEUE}")
    return await client.execute_workflow(
        ExperimentWorkflow.run,
        {"config": config.to_dict(), "output_dir": out},
        id=workflow_id,
        task_queue=TEMPORAL_TASK_QUEUE,
    )


def _run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    target = output_directory(config, args.out)
    if args.temporal:
        outcome = asyncio.run(run_on_temporal(config, str(target)))
        summary, files = outcome["summary"], outcome["files"]
    else:
        result: ExperimentResult = run_experiment(config, args.threads)
        files = [str(path) for path in write_outputs(result, target, config)]
        summary = result.summary()
    for path in files:
        print(path)
    _print_criteria(summary["criteria"])
    return EXIT_PASS if summary["pass"] else EXIT_CRITERION_FAILED


def _sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    aggregate, passed = seed_sweep(config, _parse_seeds(args.seeds), args.out, args.threads)
    print(output_directory(config, args.out))
    print(aggregate.to_string(index=False))
    return EXIT_PASS if passed else EXIT_CRITERION_FAILED


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=SPLITTING_LOG_LEVEL, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list":
            print(list_experiments())
            return EXIT_PASS
        if args.command == "sweep":
            return _sweep(args)
        return _run(args)
    except argparse.ArgumentTypeError as e:
        logger.error(str(e))
        return EXIT_ERROR
    except SplittingError as e:
        logger.error(f"{e.type}: {e.message}")
        return EXIT_ERROR
    except WorkflowFailureError as e:
        cause = e.cause
        while cause is not None and not isinstance(cause, ApplicationError):
            cause = getattr(cause, "cause", None)
        if cause is None:
            raise
        logger.error(f"Workflow failed with {cause.type}: {cause.message}")
        return EXIT_ERROR


def run() -> None:
    sys.exit(main())
