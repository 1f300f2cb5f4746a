"""Reproducible random streams for blocked Monte Carlo.

A run is split into fixed-size sample blocks. Block ``b`` of stream ``s``
draws from ``Philox(SeedSequence(root, spawn_key=(s, b)))``. Philox is a
counter-based generator, so each block is an independent stream that depends
only on ``(root, s, b)``. Blocks are assigned to workers in any order, which
makes the output independent of the worker count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK_SIZE = 4096

# stream tags, one per consumer
STREAM_ENSEMBLE = 1
STREAM_PATHS = 2
STREAM_REVERSE = 3
STREAM_REVERSE_START = 4
STREAM_FIELDS = 5


def block_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(block)))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(rng)))


def block_slices(n: int, block_size: int = BLOCK_SIZE):
    return [slice(i, min(i + block_size, n)) for i in range(0, n, block_size)]


def map_blocks(fn, n: int, workers: int = 1, block_size: int = BLOCK_SIZE):
    """Call ``fn(block_index, size)`` for each block and return results in block order."""
    slices = block_slices(n, block_size)
    jobs = [(b, s.stop - s.start) for b, s in enumerate(slices)]
    if workers <= 1 or len(jobs) <= 1:
        return [fn(b, size) for b, size in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))
