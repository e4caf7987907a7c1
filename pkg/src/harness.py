"""
Runs experiments over a fixed path-chunk plan and writes their reports.

The chunk plan depends only on the path count and SPLITTING_PATHS_PER_CHUNK; every chunk
is a pure function of (config, chunk) and chunks are merged in plan order, so the thread
count and the execution backend never change a single output byte.
"""

import json
import logging
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from shared.config import SPLITTING_OUTPUT_DIR, SPLITTING_PATHS_PER_CHUNK, resolve_thread_count
from src.errors import ConfigError, EnsembleError
from src.experiments import ExperimentConfig, ExperimentResult, Records

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
SUMMARY_FILE = "summary.json"
SWEEP_FILE = "sweep_summary.csv"


@dataclass(frozen=True)
class Chunk:
    index: int
    start: int
    stop: int

    @property
    def path_ids(self) -> range:
        return range(self.start, self.stop)

    def to_dict(self) -> dict:
        return {"index": self.index, "start": self.start, "stop": self.stop}


def chunk_plan(total: int, size: int = SPLITTING_PATHS_PER_CHUNK) -> list[Chunk]:
    if total < 1 or size < 1:
        raise ConfigError(f"chunk plan needs positive sizes, got total={total}, size={size}")
    return [Chunk(i, start, min(start + size, total)) for i, start in enumerate(range(0, total, size))]


def simulate_chunk(config: ExperimentConfig, chunk: Chunk) -> Records:
    records = config.definition.simulate(config.params, config.master_seed, chunk.path_ids)
    for key, values in records.items():
        if np.shape(values)[0] != chunk.stop - chunk.start:
            raise EnsembleError(f"record {key} has {np.shape(values)[0]} rows for a chunk of {chunk.stop - chunk.start} paths")
    logger.debug(f"{config.experiment}: chunk {chunk.index} (paths {chunk.start}..{chunk.stop - 1}) done")
    return records


def save_chunk(records: Records, path: str | Path) -> Path:
    """Store a record block as an uncompressed .npz; the key order is kept."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, __keys__=np.array(list(records)), **records)
    return path


def load_chunk(path: str | Path) -> Records:
    with np.load(path, allow_pickle=False) as data:
        return {str(key): data[str(key)] for key in data["__keys__"]}


def merge_records(parts: Sequence[Records]) -> Records:
    """Concatenate chunk records along the path axis, in the order given."""
    if not parts:
        raise EnsembleError("no chunk records to merge")
    keys = list(parts[0])
    if any(list(part) != keys for part in parts):
        raise EnsembleError("chunk records disagree on their keys")
    return {key: np.concatenate([part[key] for part in parts], axis=0) for key in keys}


def summarize(config: ExperimentConfig, records: Records) -> ExperimentResult:
    result = config.definition.summarize(config.params, config.master_seed, records)
    failed = [c.criterion for c in result.criteria if not c.passed]
    if failed:
        logger.warning(f"{config.experiment} (seed {config.master_seed}): {len(failed)} criterion(s) failed: {failed}")
    else:
        logger.info(f"{config.experiment} (seed {config.master_seed}): all {len(result.criteria)} criteria passed")
    return result


def run_experiment(config: ExperimentConfig, threads: int | None = None) -> ExperimentResult:
    plan = chunk_plan(config.paths)
    workers = resolve_thread_count(threads)
    logger.info(f"Running {config.experiment}: {config.paths} paths in {len(plan)} chunk(s) on {workers} thread(s)")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda chunk: simulate_chunk(config, chunk), plan))
    return summarize(config, merge_records(parts))


def output_directory(config: ExperimentConfig, out: str | Path | None = None) -> Path:
    if out:
        return Path(out)
    if config.output_dir:
        return Path(config.output_dir)
    return Path(SPLITTING_OUTPUT_DIR) / f"{config.experiment}-seed{config.master_seed}"


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _replace_directory(staging: Path, target: Path) -> None:
    """Swap a fully written staging directory into place."""
    if target.exists():
        retired = Path(tempfile.mkdtemp(prefix=f".{target.name}.old-", dir=target.parent))
        os.replace(target, retired / target.name)
        os.replace(staging, target)
        shutil.rmtree(retired, ignore_errors=True)
    else:
        os.replace(staging, target)


def write_outputs(result: ExperimentResult, target: str | Path, config: ExperimentConfig | None = None) -> list[Path]:
    """Write every table as <name>.csv plus summary.json; nothing appears at `target` unless all files were written."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{target.name}.tmp-", dir=target.parent))
    try:
        for name, frame in result.tables.items():
            _write_csv(frame, staging / f"{name}.csv")
        summary = result.summary()
        if config is not None:
            summary["config"] = config.to_dict()
        with open(staging / SUMMARY_FILE, "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write("\n")
        _replace_directory(staging, target)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    written = sorted(target.iterdir())
    logger.info(f"Wrote {len(written)} file(s) to {target}")
    return written


def seed_sweep(config: ExperimentConfig, seeds: Sequence[int], out: str | Path | None = None, threads: int | None = None) -> tuple[pd.DataFrame, bool]:
    """
    Run the experiment once per seed into <out>/seed-<s> and aggregate every criterion's
    measured value into sweep_summary.csv (criterion, mean, std, seeds, passed).
    """
    if len(seeds) < 2:
        raise ConfigError(f"a sweep needs at least two seeds, got {list(seeds)}")
    root = output_directory(config, out)
    staging_parent = root.parent
    staging_parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{root.name}.tmp-", dir=staging_parent))
    rows = []
    try:
        for repeat, seed in enumerate(seeds):
            seeded = config.with_seed(int(seed))
            result = run_experiment(seeded, threads)
            name = f"seed-{seed}" if seed not in seeds[:repeat] else f"seed-{seed}-{repeat}"
            write_outputs(result, staging / name, seeded)
            rows.extend({"seed": int(seed), "criterion": c.criterion, "measured": c.measured, "pass": c.passed} for c in result.criteria)
        measurements = pd.DataFrame(rows)
        aggregate = (
            measurements.groupby("criterion", sort=False)
            .agg(mean=("measured", "mean"), std=("measured", "std"), seeds=("seed", "count"), passed=("pass", "sum"))
            .reset_index()
        )
        _write_csv(aggregate, staging / SWEEP_FILE)
        _replace_directory(staging, root)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return aggregate, bool(measurements["pass"].all())
