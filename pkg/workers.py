"""
Batch execution helpers: RNG stream spawning and an optional process pool.

A trial budget is cut into fixed-size batches, each with its own spawned
stream, so results do not depend on how many workers run them.
"""
import concurrent.futures
import logging

import numpy as np
from tqdm import tqdm

import config

logger = logging.getLogger(__name__)


def spawn_streams(master_seed, count):
    """Independent generators derived from one master seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(master_seed).spawn(count)]


def spawn_seeds(master_seed, count):
    """Child SeedSequences; picklable, for jobs sent to worker processes."""
    return np.random.SeedSequence(master_seed).spawn(count)


def batch_sizes(total, batch_size=None):
    """Split `total` trials into full batches plus one remainder batch."""
    batch_size = batch_size or config.BATCH_SIZE
    if total <= 0:
        return []
    full, rest = divmod(int(total), int(batch_size))
    return [batch_size] * full + ([rest] if rest else [])


def run_batches(fn, jobs, workers=1, desc=None, progress=False):
    """
    Apply `fn` to each job tuple and return the results in submission order.

    With workers > 1 the jobs go to a ProcessPoolExecutor; `fn` must then be
    a module-level function and every job picklable.
    """
    jobs = list(jobs)
    if not jobs:
        return []
    if workers <= 1 or len(jobs) == 1:
        it = tqdm(jobs, desc=desc, disable=not progress)
        return [fn(*job) for job in it]

    logger.debug(f"Dispatching {len(jobs)} batches to {workers} workers")
    results = [None] * len(jobs)
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(fn, *job): k for k, job in enumerate(jobs)}
        done = concurrent.futures.as_completed(futures)
        for future in tqdm(done, total=len(futures), desc=desc, disable=not progress):
            results[futures[future]] = future.result()
    return results
