"""Fixed-size batching over path indices.

Batch boundaries depend only on ``n_paths`` and ``batch_size``; the worker
count only decides how many batches run at once. That is what makes reports
bit-identical at any ``threads`` setting.
"""

from concurrent.futures import ThreadPoolExecutor

DEFAULT_BATCH = 256


def batches(n_paths, batch_size=DEFAULT_BATCH):
    return [range(a, min(a + batch_size, n_paths)) for a in range(0, n_paths, batch_size)]


def map_batches(fn, n_paths, threads=1, batch_size=DEFAULT_BATCH):
    """Apply ``fn(range)`` to every batch; results come back in batch order."""
    chunks = batches(n_paths, batch_size)
    if threads <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))
