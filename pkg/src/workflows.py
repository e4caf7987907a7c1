import asyncio
from datetime import timedelta

from temporalio import workflow
from temporalio.common import RetryPolicy
from temporalio.exceptions import ApplicationError

with workflow.unsafe.imports_passed_through():
    from src.activities import plan_experiment, simulate_paths, summarize_experiment

ACTIVITY_OPTIONS = dict(
    start_to_close_timeout=timedelta(minutes=30),
    retry_policy=RetryPolicy(
        initial_interval=timedelta(seconds=1),
        maximum_interval=timedelta(seconds=30),
    ),
    heartbeat_timeout=timedelta(minutes=2),
)

'''ExperimentWorkflow:
Runs one stochastic splitting experiment as plan -> simulate every path chunk -> summarize.
Chunks run concurrently on the worker's thread pool; their records are merged in plan order,
so the result is identical to an in-process run of the same config.'''
@workflow.defn
class ExperimentWorkflow:
    def __init__(self) -> None:
        self.status: str = "INITIALIZING"
        self.context: dict = {}
        self.completed_chunks: int = 0
        self.total_chunks: int = 0
        self.result: dict | None = None

    @workflow.run
    async def run(self, inputs: dict) -> dict:
        self.context["config"] = inputs["config"]
        self.context["output_dir"] = inputs.get("output_dir")
        workflow.logger.debug(f"Starting experiment workflow with inputs: {inputs}")

        plan = await self.plan()
        chunk_files = await asyncio.gather(*(self.simulate(chunk, plan["staging"]) for chunk in plan["chunks"]))
        self.result = await self.summarize(list(chunk_files), plan["staging"])

        self.set_workflow_status("PASSED" if self.result["summary"]["pass"] else "CRITERIA-FAILED")
        return self.result

    # workflow helper functions
    def set_workflow_status(self, status: str) -> None:
        """Set the current status of the workflow."""
        self.status = status
        details: str = f"## Workflow Status \n\n" \
                    f"- **Phase:** {status}\n" \
                    f"- **Experiment:** {self.context.get('config', {}).get('experiment', 'unknown')}\n"
        if self.total_chunks:
            details += f"- **Chunks:** {self.completed_chunks}/{self.total_chunks}\n"
        details += f"- **Last Status Set:** {workflow.now().isoformat()}\n"
        if self.result is not None:
            details += f"- **Output:** {self.result.get('output_dir')}\n"
        workflow.set_current_details(details)
        workflow.logger.debug(f"Workflow status set to: {status}")

    async def plan(self) -> dict:
        """Validate the config and fetch the chunk plan."""
        self.set_workflow_status("PLANNING")
        plan = await workflow.execute_activity(plan_experiment, {"config": self.context["config"]}, **ACTIVITY_OPTIONS)
        self.total_chunks = len(plan["chunks"])
        workflow.logger.info(f"Planned {plan['paths']} paths in {self.total_chunks} chunk(s)")
        self.set_workflow_status("SIMULATING")
        return plan

    async def simulate(self, chunk: dict, staging: str) -> dict:
        stored = await workflow.execute_activity(
            simulate_paths,
            {"config": self.context["config"], "chunk": chunk, "staging": staging},
            **ACTIVITY_OPTIONS,
        )
        self.completed_chunks += 1
        self.set_workflow_status("SIMULATING")
        return stored

    async def summarize(self, chunk_files: list[dict], staging: str) -> dict:
        self.set_workflow_status("SUMMARIZING")
        return await workflow.execute_activity(
            summarize_experiment,
            {"config": self.context["config"], "chunks": chunk_files, "staging": staging, "output_dir": self.context["output_dir"]},
            **ACTIVITY_OPTIONS,
        )

    @workflow.query
    async def GetExperimentStatus(self) -> str:
        return self.status

    @workflow.query
    async def GetCompletedChunks(self) -> dict:
        return {"completed": self.completed_chunks, "total": self.total_chunks}

    @workflow.query
    async def GetSummary(self) -> dict:
        if self.result is None:
            raise ApplicationError("Summary not available yet")
        return self.result["summary"]
