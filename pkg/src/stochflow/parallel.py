"""Deterministic chunked map over replica indices."""

from concurrent.futures import ProcessPoolExecutor

import numpy as np


def chunk_ranges(n, size):
    return [(a, min(n, a + size)) for a in range(0, n, size)]


def map_chunks(fn, args, n, workers=1, chunk=64):
    """Apply ``fn(*args, start, stop)`` over fixed index chunks and concatenate in order.

    Chunk boundaries depend only on ``n`` and ``chunk``, never on ``workers``, so
    the concatenated result is identical for any worker count.
    """
    ranges = chunk_ranges(n, chunk)
    if workers <= 1 or len(ranges) == 1:
        parts = [fn(*args, a, b) for a, b in ranges]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(fn, *args, a, b) for a, b in ranges]
            parts = [f.result() for f in futs]
    return np.concatenate(parts, axis=0) if parts else np.empty(0)
