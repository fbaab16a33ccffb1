import numpy as np

import config
from workers import batch_sizes, run_batches, spawn_seeds, spawn_streams


def _square(x):
    return x * x


def test_batch_sizes():
    assert batch_sizes(0) == []
    assert batch_sizes(10, 4) == [4, 4, 2]
    assert sum(batch_sizes(12345)) == 12345
    assert batch_sizes(config.BATCH_SIZE) == [config.BATCH_SIZE]


def test_streams_are_reproducible():
    a = [g.integers(1 << 30) for g in spawn_streams(3, 4)]
    b = [g.integers(1 << 30) for g in spawn_streams(3, 4)]
    assert a == b
    assert len(set(a)) == 4
    seeds = spawn_seeds(3, 2)
    assert np.random.default_rng(seeds[0]).integers(1 << 30) == a[0]


def test_run_batches_keeps_order():
    jobs = [(k,) for k in range(6)]
    assert run_batches(_square, jobs) == [0, 1, 4, 9, 16, 25]
    assert run_batches(_square, jobs, workers=2) == [0, 1, 4, 9, 16, 25]
    assert run_batches(_square, []) == []


def test_worker_count():
    assert config.worker_count(3) == 3
    assert config.worker_count(0) == 1
    assert config.worker_count() >= 1
