"""
Tests for the experiment activities.
"""

import json
import sys
from pathlib import Path

import pytest
from temporalio.testing import ActivityEnvironment

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.activities import plan_experiment, simulate_paths, summarize_experiment
from src.errors import ConfigError
from src.experiments import config_from_dict
from src.harness import run_experiment, write_outputs

CONFIG = {
    "experiment": "counterexample",
    "master_seed": 8,
    "params": {"horizon": 1.0, "t": 1.0, "n_values": [4, 64], "finest_level": 6, "paths": 300},
}


def test_plan_experiment_returns_chunk_plan():
    """Plan covers every path once, in order."""
    plan = ActivityEnvironment().run(plan_experiment, {"config": CONFIG})
    assert plan["experiment"] == "counterexample"
    assert plan["paths"] == 300
    covered = [(chunk["start"], chunk["stop"]) for chunk in plan["chunks"]]
    assert covered[0][0] == 0 and covered[-1][1] == 300
    assert all(a[1] == b[0] for a, b in zip(covered, covered[1:]))
    assert Path(plan["staging"]).parent.name == ".chunks"


def test_plan_experiment_rejects_invalid_config():
    bad = dict(CONFIG, params={"n_values": [3]})
    with pytest.raises(ConfigError):
        ActivityEnvironment().run(plan_experiment, {"config": bad})


def test_activity_pipeline_matches_in_process_run(tmp_path):
    """Plan, simulate every chunk out of order, summarize: same bytes as the in-process harness."""
    env = ActivityEnvironment()
    heartbeats = []
    env.on_heartbeat = lambda *details: heartbeats.append(details)

    plan = env.run(plan_experiment, {"config": CONFIG})
    staging = str(tmp_path / "staging")
    stored = [
        env.run(simulate_paths, {"config": CONFIG, "chunk": chunk, "staging": staging})
        for chunk in reversed(plan["chunks"])
    ]
    assert heartbeats

    outcome = env.run(
        summarize_experiment,
        {"config": CONFIG, "chunks": stored, "staging": staging, "output_dir": str(tmp_path / "temporal")},
    )
    assert outcome["summary"]["pass"] is True
    assert not Path(staging).exists()

    config = config_from_dict(CONFIG)
    write_outputs(run_experiment(config), tmp_path / "local", config)
    for name in ("counterexample.csv", "summary.json"):
        assert (tmp_path / "temporal" / name).read_bytes() == (tmp_path / "local" / name).read_bytes()
    assert json.loads((tmp_path / "temporal" / "summary.json").read_text())["master_seed"] == 8
