"""Seeded, schedule-independent ensemble execution.

Work is cut into fixed-size blocks of paths.  Block ``b`` of a stream draws
from a PCG64 generator keyed by (master seed, stream tag, b), so the set of
random numbers consumed never depends on how many threads execute the
blocks.  Results come back in block order and callers reduce them in that
order, which keeps floating point sums bitwise reproducible.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

BLOCK_SIZE = 8192
THREADS_ENV = "ELASTOPLAST_THREADS"

T = TypeVar("T")


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            n = 0
        if n >= 1:
            return n
    return os.cpu_count() or 1


def stream_key(stream: str) -> int:
    return zlib.crc32(stream.encode("utf-8"))


def block_rng(seed: int, stream: str, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(stream_key(stream), int(block)))
    return np.random.Generator(np.random.PCG64(ss))


def blocks(n_items: int, block_size: int = BLOCK_SIZE):
    """(index, start, stop) triples covering range(n_items)."""
    return [(b, s, min(s + block_size, n_items)) for b, s in enumerate(range(0, n_items, block_size))]


def map_blocks(fn: Callable[[np.random.Generator, int, int], T], n_items: int, seed: int, stream: str,
               block_size: int = BLOCK_SIZE, threads: int | None = None) -> list[T]:
    """Run ``fn(rng, start, stop)`` on every block, returning results in block order."""
    jobs = blocks(n_items, block_size)
    n_threads = min(thread_count() if threads is None else threads, max(1, len(jobs)))

    def run(job):
        b, start, stop = job
        return fn(block_rng(seed, stream, b), start, stop)

    if n_threads <= 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        return list(pool.map(run, jobs))
