import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor

from temporalio.worker import Worker

from src import activities
from src.workflows import ExperimentWorkflow
from shared.config import SPLITTING_LOG_LEVEL, TEMPORAL_TASK_QUEUE, get_temporal_client, resolve_thread_count


async def main() -> None:
    logging.basicConfig(level=SPLITTING_LOG_LEVEL)
    await run_worker()


async def run_worker() -> None:
    # Get a client and init the list of activities
    client = await get_temporal_client()
    threads = resolve_thread_count()
    with ThreadPoolExecutor(max_workers=threads) as activity_executor:
        worker = Worker(
            client,
            task_queue=TEMPORAL_TASK_QUEUE,
            workflows=[ExperimentWorkflow],
            activities=[activities.plan_experiment,
                        activities.simulate_paths,
                        activities.summarize_experiment],
            activity_executor=activity_executor,
            max_concurrent_activities=threads,
        )
        print(f"Starting worker on {TEMPORAL_TASK_QUEUE} with {threads} activity thread(s)...")
        await worker.run()


def run() -> None:
    asyncio.run(main())


if __name__ == "__main__":
    run()
