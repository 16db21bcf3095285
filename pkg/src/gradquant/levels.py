"""Quantization level solvers.

Four families are implemented:

* ``orq_levels``: optimized random quantization. Levels are solved from
  the stationarity condition of the expected stochastic-rounding error,
  applied recursively: fix the endpoints at the data range, solve the
  midpoint level, then solve each half the same way. Works for any
  empirical distribution; needs ``s = 2**K + 1`` levels.
* ``bingrad_b_levels`` / ``bingrad_pb_level``: two-level schemes. The
  deterministic variant places its levels at the conditional means
  around a threshold; the partially biased variant solves a single
  magnitude so that interior values can still be rounded without bias.
* ``evenly_spaced_levels``: the classic baseline, levels uniform over
  ``[-norm, +norm]``.
* ``linear_cdf_levels``: quantile baseline, levels at evenly spaced
  fractions of the empirical CDF.

All solvers are pure functions and accumulate in float64. Discrete
solves restrict their candidates to the distinct data values inside the
search interval and break ties toward the smallest candidate, which
makes every solve deterministic and reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensorcore import BucketView

__all__ = [
    "LevelSet",
    "BinaryLevels",
    "MidpointSolve",
    "DegenerateIntervalError",
    "solve_mid_level",
    "orq_levels",
    "bingrad_b_levels",
    "bingrad_pb_level",
    "evenly_spaced_levels",
    "linear_cdf_levels",
    "solve_for_scheme",
    "orq_depth_for",
]

MULTI_LEVEL_SCHEMES = ("orq", "qsgd", "terngrad", "linear")
BINARY_SCHEMES = ("bingrad_b", "bingrad_pb", "signsgd")


class DegenerateIntervalError(ValueError):
    """No data falls inside the requested solve interval."""


@dataclass(frozen=True)
class LevelSet:
    """Sorted, strictly increasing quantization levels for one bucket.

    Coincident solved levels are collapsed before construction, so the
    stored count may be smaller than the nominal level count of the
    scheme (down to a single level for a constant bucket).
    """

    levels: np.ndarray
    scheme: str

    def __post_init__(self) -> None:
        arr = np.asarray(self.levels, dtype=np.float64).ravel()
        if arr.size == 0:
            raise ValueError("a level set needs at least one level")
        if arr.size > 1 and not np.all(np.diff(arr) > 0):
            raise ValueError("levels must be strictly increasing")
        arr.setflags(write=False)
        object.__setattr__(self, "levels", arr)

    @property
    def s(self) -> int:
        return int(self.levels.size)


@dataclass(frozen=True)
class BinaryLevels:
    """The two reconstruction values of a binary scheme plus its threshold."""

    b_neg: float
    b_pos: float
    b_mid: float
    scheme: str

    def __post_init__(self) -> None:
        if not (self.b_neg <= self.b_mid <= self.b_pos):
            raise ValueError("binary levels must satisfy b_neg <= b_mid <= b_pos")


@dataclass(frozen=True)
class MidpointSolve:
    """Trace record of one midpoint solve inside the recursive solver."""

    level_index: int
    lo: float
    hi: float
    solved: float
    residual: float


def solve_mid_level(lo: float, hi: float, values) -> float:
    """Solve the optimal level between two fixed neighbors.

    Minimizes ``|count(values >= b, values <= hi) - target|`` where
    ``target = sum(v - lo) / (hi - lo)`` over values in ``[lo, hi]``.
    The target does not depend on ``b`` and the count is non-increasing
    in ``b``, so a single scan over the sorted distinct values finds the
    minimizer; ties go to the smallest candidate.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    v = _as_array(values)
    v = np.sort(v[(v >= lo) & (v <= hi)])
    if v.size == 0:
        raise DegenerateIntervalError(f"no values inside [{lo}, {hi}]")
    return _solve_sorted(lo, hi, v)[0]


def _solve_sorted(lo: float, hi: float, v: np.ndarray) -> tuple[float, float]:
    """Midpoint solve over a sorted slice; returns (level, residual)."""
    target = float(np.sum(v - lo)) / (hi - lo)
    cand, first = np.unique(v, return_index=True)
    count_at_or_above = v.size - first
    resid = np.abs(count_at_or_above - target)
    k = int(np.argmin(resid))  # argmin takes the first, hence smallest, candidate
    return float(cand[k]), float(resid[k])


def orq_levels(values, K: int, trace: list[MidpointSolve] | None = None) -> LevelSet:
    """Solve ``2**K + 1`` levels by recursive midpoint optimization.

    Endpoints are pinned to the data minimum and maximum (the optimal
    outer levels for any truncated distribution). Each recursion solves
    the midpoint of its interval, then descends into both halves with
    the data partitioned so every element lands in exactly one interval:
    left-closed, right-open, except the rightmost interval which keeps
    its upper endpoint.

    Pass a list as ``trace`` to capture every interior solve, e.g. for
    residual inspection.
    """
    if K < 1:
        raise ValueError("need K >= 1")
    v = np.sort(_as_array(values))
    if v.size == 0:
        raise ValueError("cannot solve levels for an empty bucket")
    lo, hi = float(v[0]), float(v[-1])
    if lo == hi:
        return LevelSet(np.array([lo]), "orq")
    s = 2**K + 1
    slots = np.empty(s, dtype=np.float64)
    slots[0], slots[-1] = lo, hi
    _orq_fill(v, slots, 0, s - 1, trace)
    return LevelSet(np.unique(slots), "orq")


def _orq_fill(
    v: np.ndarray, slots: np.ndarray, left: int, right: int, trace
) -> None:
    mid = (left + right) // 2
    lo, hi = float(slots[left]), float(slots[right])
    if lo == hi:
        slots[left:right + 1] = lo
        return
    i0 = int(np.searchsorted(v, lo, side="left"))
    i1 = v.size if hi == v[-1] else int(np.searchsorted(v, hi, side="left"))
    sub = v[i0:i1]
    if sub.size == 0:
        slots[mid] = lo
    else:
        solved, resid = _solve_sorted(lo, hi, sub)
        slots[mid] = solved
        if trace is not None:
            trace.append(MidpointSolve(mid, lo, hi, solved, resid))
    if right - left > 2:
        _orq_fill(v, slots, left, mid, trace)
        _orq_fill(v, slots, mid, right, trace)


def bingrad_b_levels(values, refine_iters: int = 0, tol: float = 1e-12) -> BinaryLevels:
    """Two deterministic levels at the conditional means about a threshold.

    The threshold starts at the plain mean. Each optional refinement
    moves it to the midpoint of the current levels and recomputes the
    conditional means, stopping early once the threshold moves by less
    than ``tol``. Zero refinements is the cheap default.
    """
    v = _as_array(values)
    if v.size == 0:
        raise ValueError("cannot solve levels for an empty bucket")
    b_mid = float(v.mean())
    b_neg, b_pos = _conditional_means(v, b_mid)
    for _ in range(refine_iters):
        new_mid = 0.5 * (b_neg + b_pos)
        if abs(new_mid - b_mid) <= tol:
            break
        b_mid = new_mid
        b_neg, b_pos = _conditional_means(v, b_mid)
    return BinaryLevels(b_neg, b_pos, b_mid, "bingrad_b")


def _conditional_means(v: np.ndarray, threshold: float) -> tuple[float, float]:
    below = v < threshold
    if not below.any() or below.all():
        return threshold, threshold
    return float(v[below].mean()), float(v[~below].mean())


def bingrad_pb_level(values) -> BinaryLevels:
    """Solve the symmetric magnitude of the partially biased binary scheme.

    Treats the data as a sample from a zero-mean symmetric distribution
    via its magnitudes ``a = |v|`` and picks the ``b >= 0`` minimizing
    ``|b * N - sum(a[a >= b])``. The first term increases and the second
    never increases in ``b``, so the crossing is found by one scan over
    the sorted distinct magnitudes; ties go to the smallest.
    """
    v = _as_array(values)
    if v.size == 0:
        raise ValueError("cannot solve levels for an empty bucket")
    a = np.sort(np.abs(v))
    cand, first = np.unique(a, return_index=True)
    tail_sums = np.cumsum(a[::-1])[::-1][first]
    objective = np.abs(cand * a.size - tail_sums)
    b1 = float(cand[int(np.argmin(objective))])
    return BinaryLevels(-b1, b1, 0.0, "bingrad_pb")


def evenly_spaced_levels(norm: float, s: int, scheme: str = "qsgd") -> LevelSet:
    """``s`` levels uniform over ``[-norm, +norm]``; the middle one is exactly 0."""
    if norm < 0:
        raise ValueError("norm must be non-negative")
    if s < 3 or s % 2 == 0:
        raise ValueError("evenly spaced level count must be odd and >= 3")
    if norm == 0:
        return LevelSet(np.array([0.0]), scheme)
    fractions = np.arange(s, dtype=np.float64) / (s - 1)
    # (2f - 1) * norm keeps the endpoints exact, the middle level exactly
    # zero, and the set mirror-symmetric whenever s - 1 is a power of two
    return LevelSet((2.0 * fractions - 1.0) * norm, scheme)


def linear_cdf_levels(values, s: int) -> LevelSet:
    """``s`` levels at evenly spaced empirical quantiles (nearest rank)."""
    if s < 2:
        raise ValueError("need at least two levels")
    v = np.sort(_as_array(values))
    if v.size == 0:
        raise ValueError("cannot solve levels for an empty bucket")
    n = v.size
    ranks = np.ceil(np.arange(s) / (s - 1) * n).astype(np.int64)
    idx = np.clip(ranks, 1, n) - 1
    return LevelSet(np.unique(v[idx]), "linear")


def orq_depth_for(s: int) -> int:
    """Map a level count to the recursion depth K, enforcing s = 2**K + 1."""
    K = max(s - 1, 0).bit_length() - 1
    if K < 1 or 2**K + 1 != s:
        raise ValueError(
            f"orq supports s = 2**K + 1 levels (3, 5, 9, 17, ...), not s={s}"
        )
    return K


def solve_for_scheme(
    scheme: str, values, s: int = 3, refine_iters: int = 0
) -> LevelSet | BinaryLevels:
    """Solve a bucket's levels for any named scheme.

    ``terngrad`` forces s=3; ``qsgd`` and ``terngrad`` space their levels
    over the bucket's max magnitude; ``signsgd`` scales both levels by
    the mean magnitude.
    """
    v = _as_array(values)
    if v.size == 0:
        raise ValueError("cannot solve levels for an empty bucket")
    if scheme == "orq":
        return orq_levels(v, orq_depth_for(s))
    if scheme in ("qsgd", "terngrad"):
        if scheme == "terngrad":
            s = 3
        return evenly_spaced_levels(float(np.abs(v).max()), s, scheme)
    if scheme == "linear":
        return linear_cdf_levels(v, s)
    if scheme == "bingrad_b":
        return bingrad_b_levels(v, refine_iters=refine_iters)
    if scheme == "bingrad_pb":
        return bingrad_pb_level(v)
    if scheme == "signsgd":
        m = float(np.abs(v).mean())
        return BinaryLevels(-m, m, 0.0, "signsgd")
    raise ValueError(f"unknown scheme: {scheme!r}")


def _as_array(values) -> np.ndarray:
    if isinstance(values, BucketView):
        return values.values.astype(np.float64)
    return np.asarray(values, dtype=np.float64).ravel()
