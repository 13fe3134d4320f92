"""Concurrent execution of independent Monte Carlo runs."""

import contextvars
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import TypeVar

from loguru import logger
from tqdm.auto import tqdm

from .errors import NumericalFailure

T = TypeVar("T")


def run_batch(
    task: Callable[[int], T],
    runs: int,
    threads: int = 1,
    desc: str = "Runs",
    show_progress: bool = True,
) -> list[T | None]:
    """Run task(run_index) for every index and merge results by index.

    Each run draws its randomness from its own index, so the merged list does not
    depend on the thread count or on completion order.

    Args:
        task: Callable taking the run index
        runs: Number of runs
        threads: Worker threads (1 runs inline)
        desc: Progress bar label
        show_progress: Show a tqdm progress bar

    Returns:
        Results in run-index order; None for runs that raised a NumericalFailure
    """
    if runs < 0:
        raise ValueError(f"runs must be nonnegative, got {runs}")
    logger.debug(f"Dispatching {runs} runs on {threads} threads ({desc})")

    progress = (
        tqdm(total=runs, desc=desc, unit=" runs", leave=False) if show_progress and runs else None
    )
    results: list[T | None] = [None] * runs

    def guarded(index: int) -> tuple[int, T | None]:
        with logger.contextualize(run=index):
            try:
                return index, task(index)
            except NumericalFailure as e:
                logger.error(f"Run {index} failed: {e}")
                return index, None

    try:
        if threads <= 1:
            for index in range(runs):
                _, results[index] = guarded(index)
                if progress:
                    progress.update(1)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                # Workers inherit the caller's logging context (experiment name)
                futures = [
                    pool.submit(contextvars.copy_context().run, guarded, index)
                    for index in range(runs)
                ]
                for future in as_completed(futures):
                    index, value = future.result()
                    results[index] = value
                    if progress:
                        progress.update(1)
    finally:
        if progress:
            progress.close()

    failed = sum(r is None for r in results)
    if failed:
        logger.warning(f"{failed}/{runs} runs failed ({desc})")
    return results
