"""Keyed random substreams.

Every random draw is addressed by ``(master_seed, tag, path_index, dim)``
so that results do not depend on batching or on the number of workers.
"""

import numpy as np

from .errors import DomainError

SEED_BITS = 64

# stream tags
NOISE = 0


def check_seed(seed):
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise DomainError(f"seed must be an integer, got {seed!r}") from None
    if not 0 <= seed < 2**SEED_BITS:
        raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def substream(seed, *key):
    """Independent Philox generator for ``key`` under ``seed``."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def standard_normals(seed, tag, paths, dim, n):
    """Array ``(len(paths), dim, n)`` of N(0, 1) draws, one substream per (path, dim)."""
    out = np.empty((len(paths), dim, n))
    for a, p in enumerate(paths):
        for d in range(dim):
            out[a, d] = substream(seed, tag, p, d).standard_normal(n)
    return out
