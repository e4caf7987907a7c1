import shutil
from pathlib import Path

from temporalio import activity
from temporalio.exceptions import ApplicationError

from shared.config import SPLITTING_OUTPUT_DIR
from src.errors import SplittingError
from src.experiments import config_from_dict
from src.harness import (
    Chunk,
    chunk_plan,
    load_chunk,
    merge_records,
    output_directory,
    save_chunk,
    simulate_chunk,
    summarize,
    write_outputs,
)

CHUNK_DIRECTORY = ".chunks"


'''These activities split one experiment into plan, per-chunk simulation and summary steps.
They are synchronous and CPU bound, so the worker runs them on a thread pool.'''
@activity.defn
def plan_experiment(input: dict) -> dict:
    return plan_some_paths(input)

@activity.defn
def simulate_paths(input: dict) -> dict:
    return simulate_some_paths(input)

@activity.defn
def summarize_experiment(input: dict) -> dict:
    return summarize_some_paths(input)


def _config(input: dict):
    try:
        return config_from_dict(input["config"], source=f"workflow {activity.info().workflow_id}")
    except KeyError:
        exception_message = "Activity input has no experiment config."
        activity.logger.error(exception_message)
        raise ApplicationError(exception_message, non_retryable=True)


def plan_some_paths(input: dict) -> dict:
    """
    Validates the config and returns the fixed chunk plan together with the staging
    directory the chunk records are written to.
    """
    config = _config(input)
    plan = chunk_plan(config.paths)
    staging = Path(SPLITTING_OUTPUT_DIR) / CHUNK_DIRECTORY / activity.info().workflow_id
    activity.logger.info(f"Planned {config.experiment}: {config.paths} paths in {len(plan)} chunk(s)")
    return {
        "experiment": config.experiment,
        "paths": config.paths,
        "chunks": [chunk.to_dict() for chunk in plan],
        "staging": str(staging),
    }


def simulate_some_paths(input: dict) -> dict:
    """Simulates one chunk and stores its records; returns the chunk file."""
    config = _config(input)
    chunk = Chunk(**input["chunk"])
    activity.heartbeat(f"Simulating paths {chunk.start}..{chunk.stop - 1}")
    try:
        records = simulate_chunk(config, chunk)
    except SplittingError as e:
        activity.logger.error(f"Chunk {chunk.index} of {config.experiment} failed: {e.message}")
        raise
    path = save_chunk(records, Path(input["staging"]) / f"chunk-{chunk.index:05d}.npz")
    activity.heartbeat(f"Chunk {chunk.index} stored")
    return {"chunk": chunk.index, "file": str(path)}


def summarize_some_paths(input: dict) -> dict:
    """
    Merges the chunk files in plan order, evaluates the criteria and writes the report
    directory atomically. The staging directory is removed afterwards.
    """
    config = _config(input)
    files = [entry["file"] for entry in sorted(input["chunks"], key=lambda entry: entry["chunk"])]
    activity.heartbeat(f"Merging {len(files)} chunk(s)")
    records = merge_records([load_chunk(path) for path in files])
    result = summarize(config, records)
    activity.heartbeat("Writing outputs")
    target = output_directory(config, input.get("output_dir"))
    written = write_outputs(result, target, config)
    shutil.rmtree(input["staging"], ignore_errors=True)
    return {"summary": result.summary(), "output_dir": str(target), "files": [str(path) for path in written]}
