"""
Tests for the experiment workflow on a time-skipping Temporal test server.
"""

import asyncio
import json
import sys
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pytest
from temporalio.testing import WorkflowEnvironment
from temporalio.worker import Worker

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from src import activities
from src.experiments import config_from_dict
from src.harness import run_experiment, write_outputs
from src.workflows import ExperimentWorkflow

TASK_QUEUE = "splitting-test-queue"

CONFIG = {
    "experiment": "counterexample",
    "master_seed": 12,
    "params": {"horizon": 1.0, "t": 1.0, "n_values": [4, 64], "finest_level": 6, "paths": 300},
}


async def _run_workflow(inputs: dict) -> tuple[dict, str, dict]:
    try:
        env = await WorkflowEnvironment.start_time_skipping()
    except Exception as e:
        pytest.skip(f"Temporal test server unavailable: {e}")
    async with env:
        with ThreadPoolExecutor(max_workers=2) as activity_executor:
            async with Worker(
                env.client,
                task_queue=TASK_QUEUE,
                workflows=[ExperimentWorkflow],
                activities=[activities.plan_experiment, activities.simulate_paths, activities.summarize_experiment],
                activity_executor=activity_executor,
            ):
                handle = await env.client.start_workflow(
                    ExperimentWorkflow.run, inputs, id=f"splitting-test-{uuid.uuid4()}", task_queue=TASK_QUEUE
                )
                result = await handle.result()
                status = await handle.query(ExperimentWorkflow.GetExperimentStatus)
                chunks = await handle.query(ExperimentWorkflow.GetCompletedChunks)
    return result, status, chunks


def test_workflow_runs_every_chunk_and_writes_outputs(tmp_path, monkeypatch):
    """Plan, simulate and summarize through a real worker; same bytes as the in-process harness."""
    monkeypatch.setattr(activities, "SPLITTING_OUTPUT_DIR", str(tmp_path / "results"))
    inputs = {"config": CONFIG, "output_dir": str(tmp_path / "temporal")}
    result, status, chunks = asyncio.run(_run_workflow(inputs))

    assert result["summary"]["pass"] is True
    assert status == "PASSED"
    assert chunks["completed"] == chunks["total"] >= 2
    assert Path(result["output_dir"]) == tmp_path / "temporal"
    assert not (tmp_path / "results" / activities.CHUNK_DIRECTORY).exists() or not any(
        (tmp_path / "results" / activities.CHUNK_DIRECTORY).iterdir()
    )

    config = config_from_dict(CONFIG)
    write_outputs(run_experiment(config), tmp_path / "local", config)
    for name in ("counterexample.csv", "summary.json"):
        assert (tmp_path / "temporal" / name).read_bytes() == (tmp_path / "local" / name).read_bytes()
    assert json.loads((tmp_path / "temporal" / "summary.json").read_text())["master_seed"] == 12
