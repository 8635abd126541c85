"""Deterministic chunked execution.

Work is split into contiguous index chunks; each chunk is computed
independently (all randomness is counter-based, keyed by global index)
and results are merged in chunk order.  The worker count therefore
affects wall time only, never the output bytes.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

DEFAULT_CHUNK = 4096


def worker_count(workers: int | None = None) -> int:
    """Resolve a worker count: explicit value, else HOMOG_WORKERS, else 1."""
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("HOMOG_WORKERS")
    if env:
        return max(1, int(env))
    return 1


def chunk_ranges(total: int, chunk: int = DEFAULT_CHUNK) -> list[tuple[int, int]]:
    return [(lo, min(lo + chunk, total)) for lo in range(0, total, chunk)]


def run_chunks(fn, total: int, workers: int | None = None, chunk: int = DEFAULT_CHUNK):
    """Apply fn(lo, hi) over index chunks; return results in chunk order."""
    ranges = chunk_ranges(total, chunk)
    nworkers = worker_count(workers)
    if nworkers == 1 or len(ranges) <= 1:
        return [fn(lo, hi) for lo, hi in ranges]
    with ThreadPoolExecutor(max_workers=nworkers) as pool:
        futures = [pool.submit(fn, lo, hi) for lo, hi in ranges]
        return [f.result() for f in futures]
