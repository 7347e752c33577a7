"""Cached Gauss rules on [-1, 1]."""

from functools import lru_cache

import numpy as np
from scipy import special


@lru_cache(maxsize=64)
def legendre(n):
    return special.roots_legendre(n)


@lru_cache(maxsize=64)
def jacobi(n, a, b):
    """Nodes and weights for the weight ``(1 - x)^a (1 + x)^b``."""
    if a == 0.0 and b == 0.0:
        return legendre(n)
    # scipy divides by zero in a branch it then discards when a + b = -1
    with np.errstate(divide="ignore", invalid="ignore"):
        return special.roots_jacobi(n, a, b)
