import asyncio
import logging
from typing import Any, Callable, List, Sequence

import numpy as np

logger = logging.getLogger(__name__)

Job = Callable[[], Any]


def spawn_seeds(seed: int, n: int) -> List[int]:
    """Independent integer sub-seeds, fixed by (seed, index)."""
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(n)]


async def _gather(jobs: Sequence[Job], workers: int) -> List[Any]:
    semaphore = asyncio.Semaphore(workers)

    async def run_one(job: Job) -> Any:
        async with semaphore:
            return await asyncio.to_thread(job)

    return await asyncio.gather(*(run_one(job) for job in jobs), return_exceptions=True)


def run_jobs(jobs: Sequence[Job], workers: int = 1) -> List[Any]:
    """Run independent zero-argument jobs and return their results in submission order.

    The first exception raised by any job is re-raised after every job has finished.
    """
    if workers <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    logger.info(f"Running {len(jobs)} jobs on {workers} workers")
    results = asyncio.run(_gather(jobs, workers))
    for result in results:
        if isinstance(result, BaseException):
            raise result
    return results
