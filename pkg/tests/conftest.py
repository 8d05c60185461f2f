"""Shared helpers: independent brute-force oracles kept free of library code.

The naive implementations below deliberately avoid calling the fast paths
they are used to check; they stick to plain loops and elementary numpy ops.
"""

import numpy as np
import pytest


def naive_pairwise_statistic(x: np.ndarray) -> float:
    """O(n^2 p) double loop over sample pairs, written from the definition."""
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dot = float(np.dot(x[i], x[j]))
            total += dot * dot - float(np.dot(x[i], x[i])) - float(np.dot(x[j], x[j])) + p
    return 2.0 * total / (n * (n - 1))


def random_orthogonal(p: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    return q * np.sign(np.diag(r))


def random_symmetric(p: int, rng: np.random.Generator) -> np.ndarray:
    w = rng.standard_normal((p, p))
    return (w + w.T) / 2.0


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(18231)
