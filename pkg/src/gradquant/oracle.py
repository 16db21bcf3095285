"""Brute-force reference solvers for certifying optimality on small inputs.

Both oracles enumerate a finite candidate set exhaustively and evaluate
an exact error expression for each candidate, so a disagreement with
the fast solvers is unambiguous. They are deliberately written with
their own arithmetic (no shared code with the production quantizers).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["OracleResult", "brute_force_rr_levels", "brute_force_binary_det"]


@dataclass(frozen=True)
class OracleResult:
    best_levels: np.ndarray
    best_mse: float
    evaluations: int


def brute_force_rr_levels(values, s: int = 3, grid=None) -> OracleResult:
    """Exhaustively place the interior level of a 3-level set.

    Endpoints are fixed at the data minimum and maximum; the interior
    level sweeps the distinct data values plus a uniform refinement grid
    of up to 1024 points, and the candidate with the smallest exact
    expected stochastic-rounding error wins (first on ties).

    Certification scale only: at most 64 elements and s = 3.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("oracle needs at least one element")
    if v.size > 64:
        raise ValueError("oracle is limited to 64 elements")
    if s != 3:
        raise ValueError("oracle sweeps 3-level sets only")
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        return OracleResult(np.array([lo]), 0.0, 0)
    if grid is None:
        grid = np.union1d(np.unique(v), np.linspace(lo, hi, 1024))
    else:
        grid = np.asarray(grid, dtype=np.float64).ravel()
        grid = np.sort(grid[(grid >= lo) & (grid <= hi)])
    best_b, best_mse = lo, np.inf
    for b in grid:
        mse = rr_mse_3level(v, lo, float(b), hi)
        if mse < best_mse:
            best_b, best_mse = float(b), mse
    return OracleResult(np.array([lo, best_b, hi]), best_mse, int(grid.size))


def rr_mse_3level(v: np.ndarray, lo: float, b: float, hi: float) -> float:
    """Exact expected stochastic-rounding error of levels {lo, b, hi}."""
    contrib = np.where(v <= b, (v - lo) * (b - v), (v - b) * (hi - v))
    return float(np.mean(contrib))


def brute_force_binary_det(values) -> OracleResult:
    """Optimal deterministic two-level quantization by exhaustive split.

    Sorts the data and tries every one of the N-1 split positions; each
    side's center is its mean, and the split with the smallest mean
    squared error wins. Prefix sums keep the sweep linear.
    """
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = v.size
    if n == 0:
        raise ValueError("oracle needs at least one element")
    if n > 10_000:
        raise ValueError("oracle is limited to 10^4 elements")
    if n == 1:
        return OracleResult(np.array([v[0], v[0]]), 0.0, 0)
    sums = np.cumsum(v)
    squares = np.cumsum(v * v)
    k = np.arange(1, n)
    left_ssd = squares[k - 1] - sums[k - 1] ** 2 / k
    right_sum = sums[-1] - sums[k - 1]
    right_ssd = (squares[-1] - squares[k - 1]) - right_sum**2 / (n - k)
    total = left_ssd + right_ssd
    i = int(np.argmin(total))
    split = i + 1
    centers = np.array([sums[split - 1] / split, right_sum[i] / (n - split)])
    return OracleResult(centers, float(total[i] / n), int(n - 1))
