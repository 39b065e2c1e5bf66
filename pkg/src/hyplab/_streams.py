"""Seeded RNG streams and deterministic chunked execution.

Every Monte Carlo driver derives child generators from (master seed,
integer path) so that results are bit-identical regardless of how work
is split across threads.  Chunk boundaries are fixed by sample index,
never by worker count, and partial results are merged in chunk order.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

ENV_THREADS = "HYPLAB_THREADS"

# stream tags, so different draws never alias
TAG_X0 = 1
TAG_NOISE = 2
TAG_BITS = 3
TAG_SCAN = 4

CHUNK = 256


def substream(seed, *path):
    """Child generator for (seed, path); deterministic and collision-free."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(p) & 0xFFFFFFFFFFFFFFFF for p in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def default_threads(threads=None):
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def chunk_ranges(n_items, chunk=CHUNK):
    """Fixed [start, stop) ranges; independent of thread count."""
    return [(i, min(i + chunk, n_items)) for i in range(0, n_items, chunk)]


def run_chunked(n_items, work, threads=None, chunk=CHUNK):
    """Run work(chunk_index, start, stop) over fixed chunks.

    Returns the list of results in chunk order no matter how many
    threads execute them.
    """
    ranges = chunk_ranges(n_items, chunk)
    threads = default_threads(threads)
    if threads <= 1 or len(ranges) <= 1:
        return [work(ci, a, b) for ci, (a, b) in enumerate(ranges)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(work, ci, a, b) for ci, (a, b) in enumerate(ranges)]
        return [f.result() for f in futures]
