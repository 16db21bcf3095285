"""Gradient buffers, bucket partitioning, and per-bucket statistics.

Every quantization scheme in this package operates on fixed-length
contiguous slices ("buckets") of a flattened gradient. This module owns
the buffer type, the tiling rule, and the summary statistics the level
solvers rely on (range endpoints, L1 norm, standard deviation for
clipping).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GradientBuffer",
    "BucketView",
    "BucketStats",
    "bucketize",
    "stats",
    "clip",
]


class GradientBuffer:
    """Immutable flat vector of finite 32-bit gradient values."""

    __slots__ = ("_values",)

    def __init__(self, values) -> None:
        with np.errstate(over="ignore"):  # overflow to inf is rejected below
            arr = np.array(values, dtype=np.float32).ravel()
        if arr.size == 0:
            raise ValueError("gradient buffer needs at least one element")
        if not np.all(np.isfinite(arr)):
            raise ValueError("gradient values must be finite (no NaN/Inf)")
        arr.setflags(write=False)
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        return self._values

    def __len__(self) -> int:
        return int(self._values.size)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._values
        return self._values.astype(dtype)

    def __repr__(self) -> str:
        return f"GradientBuffer(len={len(self)})"


@dataclass(frozen=True)
class BucketView:
    """A window into a parent buffer; never copies the data."""

    parent: GradientBuffer
    offset: int
    length: int

    def __post_init__(self) -> None:
        if self.length < 1:
            raise ValueError("bucket must contain at least one element")
        if self.offset < 0 or self.offset + self.length > len(self.parent):
            raise ValueError("bucket window exceeds the parent buffer")

    @property
    def values(self) -> np.ndarray:
        return self.parent.values[self.offset : self.offset + self.length]

    def __len__(self) -> int:
        return self.length


@dataclass(frozen=True)
class BucketStats:
    min: float
    max: float
    mean: float
    std: float
    l1_norm: float
    count: int


def bucketize(buffer: GradientBuffer, d: int) -> list[BucketView]:
    """Tile the buffer into buckets of length ``d``.

    All buckets have exactly ``d`` elements except possibly the last,
    which keeps the remainder (it is never zero-padded: padding would
    drag the solved levels toward zero).
    """
    if d < 1:
        raise ValueError("bucket size must be a positive integer")
    total = len(buffer)
    return [
        BucketView(buffer, start, min(d, total - start))
        for start in range(0, total, d)
    ]


def stats(bucket: BucketView | np.ndarray) -> BucketStats:
    """Summary statistics over one bucket, accumulated in float64.

    ``std`` is the population standard deviation (divide by N), which is
    well defined for a single-element bucket.
    """
    v = _bucket_values(bucket)
    if v.size == 0:
        raise ValueError("cannot compute statistics of an empty bucket")
    mean = float(v.mean())
    return BucketStats(
        min=float(v.min()),
        max=float(v.max()),
        mean=mean,
        std=float(np.sqrt(np.mean((v - mean) ** 2))),
        l1_norm=float(np.abs(v).sum()),
        count=int(v.size),
    )


def clip(bucket: BucketView | np.ndarray, c: float) -> np.ndarray:
    """Cap each element's magnitude at ``c`` times the bucket's std.

    Returns a new float32 array; the source bucket is untouched. For a
    constant bucket the std is zero and the output is all zeros, so
    clipping should be left disabled when such buckets are expected.
    """
    if c <= 0:
        raise ValueError("clipping factor must be positive")
    v = _bucket_values(bucket)
    bound = c * stats(bucket).std
    return np.asarray(np.sign(v) * np.minimum(np.abs(v), bound), dtype=np.float32)


def _bucket_values(bucket) -> np.ndarray:
    if isinstance(bucket, BucketView):
        return bucket.values.astype(np.float64)
    return np.asarray(bucket, dtype=np.float64).ravel()
