"""Apply solved level sets to gradient buckets.

Multi-level sets are applied with stochastic rounding: an element
between two levels goes to each neighbor with the probability that
keeps its expectation unchanged. The binary schemes have their own
rules (deterministic threshold, or clamp-outside / round-inside).

Reconstruction tables are rounded to float32 before use so that a
quantized bucket dequantizes to exactly the values that will travel
over the wire.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .levels import BinaryLevels, LevelSet
from .tensorcore import BucketView

__all__ = [
    "RngStream",
    "QuantizedBucket",
    "OutOfRangeError",
    "wire_table",
    "random_round",
    "quantize_bingrad_pb",
    "quantize_bingrad_b",
    "scaled_signsgd",
    "quantize_with_scheme",
    "dequantize",
    "quantization_mse",
    "expected_rr_mse",
]

_MASK64 = (1 << 64) - 1


class OutOfRangeError(ValueError):
    """An element fell outside the level range and clamping was disabled."""


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class RngStream:
    """Reproducible uniform stream with a splittable 64-bit key.

    Backed by the counter-based Philox generator, so identical keys give
    identical draw sequences on every platform. ``derive`` hashes extra
    integers into the key, giving each (worker, step, bucket) its own
    independent stream without any shared state.
    """

    __slots__ = ("seed", "counter", "_gen")

    def __init__(self, seed: int) -> None:
        self.seed = int(seed) & _MASK64
        self.counter = 0
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def derive(self, *ids: int) -> "RngStream":
        key = self.seed
        for part in ids:
            key = _splitmix64(key ^ (int(part) & _MASK64))
        return RngStream(key)

    def uniform(self, n: int) -> np.ndarray:
        self.counter += int(n)
        return self._gen.random(int(n))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen


@dataclass
class QuantizedBucket:
    """Per-element level indices plus the levels they point into.

    ``table`` is the float32 reconstruction table actually used (and
    serialized); ``levels`` keeps the solver's full-precision output.
    ``clamped`` counts elements that fell outside the level range and
    were snapped to an endpoint.
    """

    indices: np.ndarray
    levels: LevelSet | BinaryLevels
    length: int
    table: np.ndarray = field(repr=False)
    clamped: int = 0


def wire_table(levels: LevelSet | BinaryLevels) -> np.ndarray:
    """Float32 reconstruction table: sorted, duplicates collapsed."""
    if isinstance(levels, LevelSet):
        raw = levels.levels
    else:
        raw = np.array([levels.b_neg, levels.b_pos], dtype=np.float64)
    return np.unique(raw.astype(np.float32) + np.float32(0.0))  # -0.0 -> +0.0


def random_round(
    values, levels: LevelSet, rng: RngStream, clamp: bool = True
) -> QuantizedBucket:
    """Stochastically round each element to one of its two bracketing levels.

    An element v with neighbors lo <= v <= hi maps to hi with
    probability (v - lo) / (hi - lo), so the dequantized expectation is
    exactly v. Elements at a level are kept deterministically. Elements
    outside the table's range are clamped to the nearest endpoint and
    counted (or rejected when ``clamp`` is off).
    """
    v = _values_f64(values)
    table = wire_table(levels)
    t = table.astype(np.float64)
    if t.size == 1:
        outside = int(np.count_nonzero(v != t[0]))
        if outside and not clamp:
            raise OutOfRangeError("elements outside the single-level range")
        idx = np.zeros(v.size, dtype=np.uint16)
        return QuantizedBucket(idx, levels, v.size, table, outside)
    outside = int(np.count_nonzero((v < t[0]) | (v > t[-1])))
    if outside and not clamp:
        raise OutOfRangeError("elements outside the level range")
    vc = np.clip(v, t[0], t[-1])
    hi = np.maximum(np.searchsorted(t, vc, side="left"), 1)
    lo = hi - 1
    p_hi = (vc - t[lo]) / (t[hi] - t[lo])
    idx = np.where(rng.uniform(v.size) < p_hi, hi, lo).astype(np.uint16)
    return QuantizedBucket(idx, levels, v.size, table, outside)


def quantize_bingrad_pb(values, bl: BinaryLevels, rng: RngStream) -> QuantizedBucket:
    """Clamp outside [b_neg, b_pos); round stochastically inside.

    Interior elements keep their expectation; the clamped tails are the
    scheme's deliberate bias.
    """
    v = _values_f64(values)
    table = wire_table(bl)
    if table.size == 1:
        idx = np.zeros(v.size, dtype=np.uint16)
        return QuantizedBucket(idx, bl, v.size, table)
    b_neg, b_pos = float(table[0]), float(table[1])
    p_hi = np.clip((v - b_neg) / (b_pos - b_neg), 0.0, 1.0)
    interior = (v >= b_neg) & (v < b_pos)
    choose_hi = rng.uniform(v.size) < p_hi
    idx = np.where(interior, choose_hi, v >= b_pos).astype(np.uint16)
    return QuantizedBucket(idx, bl, v.size, table)


def quantize_bingrad_b(values, bl: BinaryLevels) -> QuantizedBucket:
    """Deterministic two-level quantization: threshold at b_mid."""
    v = _values_f64(values)
    table = wire_table(bl)
    if table.size == 1:
        idx = np.zeros(v.size, dtype=np.uint16)
    else:
        idx = (v >= bl.b_mid).astype(np.uint16)
    return QuantizedBucket(idx, bl, v.size, table)


def scaled_signsgd(values) -> QuantizedBucket:
    """Signs scaled by the mean magnitude; sign(0) counts as positive."""
    v = _values_f64(values)
    if v.size == 0:
        raise ValueError("cannot quantize an empty bucket")
    m = float(np.abs(v).mean())
    bl = BinaryLevels(-m, m, 0.0, "signsgd")
    return quantize_bingrad_b(v, bl)


def quantize_with_scheme(
    scheme: str, values, lv: LevelSet | BinaryLevels, rng: RngStream
) -> QuantizedBucket:
    """Dispatch a solved level object to the matching quantizer."""
    if scheme in ("orq", "qsgd", "terngrad", "linear"):
        return random_round(values, lv, rng)
    if scheme == "bingrad_pb":
        return quantize_bingrad_pb(values, lv, rng)
    if scheme in ("bingrad_b", "signsgd"):
        return quantize_bingrad_b(values, lv)
    raise ValueError(f"unknown scheme: {scheme!r}")


def dequantize(q: QuantizedBucket) -> np.ndarray:
    """Look each index up in the reconstruction table (float32 values)."""
    if q.indices.size and int(q.indices.max()) >= q.table.size:
        raise ValueError("index outside the reconstruction table")
    return q.table[q.indices]


def quantization_mse(original, q: QuantizedBucket) -> float:
    """Mean squared error between a bucket and its dequantized form."""
    v = _values_f64(original)
    if v.size != q.length:
        raise ValueError("length mismatch between original and quantized bucket")
    diff = v - dequantize(q).astype(np.float64)
    return float(np.mean(diff * diff))


def expected_rr_mse(values, table: np.ndarray) -> float:
    """Exact expected squared error of stochastic rounding on a table.

    For v between neighbors lo and hi the expectation is
    (v - lo) * (hi - v); clamped elements contribute their squared
    distance to the nearest endpoint.
    """
    v = _values_f64(values)
    t = np.asarray(table, dtype=np.float64).ravel()
    if t.size == 1:
        return float(np.mean((v - t[0]) ** 2))
    vc = np.clip(v, t[0], t[-1])
    hi = np.maximum(np.searchsorted(t, vc, side="left"), 1)
    lo = hi - 1
    per_element = (vc - t[lo]) * (t[hi] - vc) + (v - vc) ** 2
    return float(np.mean(per_element))


def _values_f64(values) -> np.ndarray:
    if isinstance(values, BucketView):
        return values.values.astype(np.float64)
    return np.asarray(values, dtype=np.float64).ravel()
