"""Synthetic gradient generators for benchmarks and certification runs.

The families deliberately cover the situations that separate adaptive
from fixed level placement: heavy tails (laplace), scale mixtures,
skew (shifted exponential), and a "layered" profile whose variance
ramps along the buffer the way gradients vary across network layers.
"""

from __future__ import annotations

import numpy as np

__all__ = ["DISTRIBUTIONS", "sample"]


def _gaussian(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, 1.0, n)

def _uniform(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, n)

def _laplace(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.laplace(0.0, 1.0, n)

def _exponential(n: int, rng: np.random.Generator) -> np.ndarray:
    # shifted to zero mean; strongly right-skewed
    return rng.exponential(1.0, n) - 1.0

def _mixture(n: int, rng: np.random.Generator) -> np.ndarray:
    wide = rng.random(n) < 0.3
    out = rng.normal(0.0, 0.05, n)
    out[wide] = rng.normal(0.0, 1.0, int(wide.sum()))
    return out

def _layered(n: int, rng: np.random.Generator) -> np.ndarray:
    """Skewed blocks of 128 whose scale doubles every 32 blocks."""
    blocks = -(-n // 128)
    i = np.arange(blocks, dtype=np.float64)
    scales = 0.02 * np.exp2(i / 32.0)
    out = (rng.exponential(1.0, (blocks, 128)) - 1.0) * scales[:, None]
    return out.reshape(-1)[:n]


DISTRIBUTIONS = {
    "gaussian": _gaussian,
    "uniform": _uniform,
    "laplace": _laplace,
    "exponential": _exponential,
    "mixture": _mixture,
    "layered": _layered,
}


def sample(dist: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if dist not in DISTRIBUTIONS:
        known = ", ".join(sorted(DISTRIBUTIONS))
        raise ValueError(f"unknown distribution {dist!r} (choose from: {known})")
    if n < 1:
        raise ValueError("need at least one element")
    return DISTRIBUTIONS[dist](int(n), rng)
