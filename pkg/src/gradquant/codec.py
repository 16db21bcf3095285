"""Bit-exact wire format for quantized gradients.

Message layout (all little-endian):

    offset  size  field
    0       1     format version (currently 1)
    1       1     scheme id
    2       2     level count s (table length per bucket)
    4       4     bucket size d
    8       8     total element count D
    16      ...   per bucket, in order: s float32 levels, then the
                  bucket's indices packed base-s into 64-bit words

Indices are packed as base-s digits, m = max{m : s**m <= 2**64} symbols
per 64-bit word, symbol j being digit j (so symbol 0 is the word modulo
s). Radix packing is what makes a 3-level gradient cost ~1.6 bits per
element instead of the 2 bits of naive bit packing.

A separate full-precision frame (scheme id 0) carries raw float64
values for the unquantized reference path; it shares the header but has
no level tables.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .levels import LevelSet
from .quantize import QuantizedBucket

__all__ = [
    "WireMessage",
    "RatioReport",
    "CodecError",
    "UnsupportedSchemeError",
    "SCHEME_IDS",
    "FORMAT_VERSION",
    "symbols_per_word",
    "encode",
    "decode",
    "ratio_report",
    "fp_frame",
    "parse_fp_frame",
    "peek_scheme",
]

FORMAT_VERSION = 1
_HEADER = struct.Struct("<BBHIQ")

SCHEME_IDS = {
    "fp": 0,
    "orq": 1,
    "qsgd": 2,
    "terngrad": 3,
    "linear": 4,
    "bingrad_b": 5,
    "bingrad_pb": 6,
    "signsgd": 7,
}
_SCHEME_NAMES = {v: k for k, v in SCHEME_IDS.items()}


class CodecError(ValueError):
    """Malformed or truncated message; ``offset`` points at the problem."""

    def __init__(self, message: str, offset: int = 0) -> None:
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UnsupportedSchemeError(CodecError):
    pass


@dataclass(frozen=True)
class WireMessage:
    version: int
    scheme: str
    s: int
    d: int
    total: int
    data: bytes
    payload_bits: int


@dataclass(frozen=True)
class RatioReport:
    achieved_ratio: float
    theoretical_ratio: float
    bits_per_element: float


def symbols_per_word(s: int) -> int:
    """Largest m with s**m <= 2**64."""
    if s < 2:
        raise ValueError("radix must be at least 2")
    m, capacity = 0, 1
    while capacity * s <= 1 << 64:
        capacity *= s
        m += 1
    return m


def encode(
    buckets: list[QuantizedBucket], d: int, pad_to: int | None = None
) -> WireMessage:
    """Serialize quantized buckets that tile one gradient.

    All buckets must share the scheme and the level count. A bucket
    whose solved table collapsed below the scheme's nominal count can be
    accommodated by passing ``pad_to``: its table is extended by
    repeating the last level (indices never point at the padding).
    """
    if d < 1:
        raise ValueError("bucket size must be positive")
    if not buckets:
        data = _HEADER.pack(FORMAT_VERSION, 0, 0, d, 0)
        return WireMessage(FORMAT_VERSION, "fp", 0, d, 0, data, len(data) * 8)
    scheme = buckets[0].levels.scheme
    if any(b.levels.scheme != scheme for b in buckets):
        raise ValueError("buckets mix quantization schemes")
    sizes = {int(b.table.size) for b in buckets}
    if pad_to is None:
        if len(sizes) != 1:
            raise ValueError("buckets mix level counts; pass pad_to to normalize")
        s = sizes.pop()
    else:
        s = int(pad_to)
        if max(sizes) > s:
            raise ValueError("pad_to is smaller than an actual level table")
    if s > 0xFFFF:
        raise ValueError("level count exceeds the 16-bit header field")
    total = sum(b.length for b in buckets)
    for i, b in enumerate(buckets):
        last = i + 1 == len(buckets)
        ok = (1 <= b.length <= d) if last else (b.length == d)
        if not ok or b.indices.size != b.length:
            raise ValueError("buckets do not tile the gradient for this bucket size")
    parts = [_HEADER.pack(FORMAT_VERSION, SCHEME_IDS[scheme], s, d, total)]
    for b in buckets:
        table = np.asarray(b.table, dtype="<f4")
        if table.size < s:
            table = np.concatenate([table, np.repeat(table[-1:], s - table.size)])
        if b.indices.size and int(b.indices.max()) >= b.table.size:
            raise ValueError("bucket index outside its level table")
        parts.append(table.tobytes())
        parts.append(_pack_indices(b.indices, s).astype("<u8").tobytes())
    data = b"".join(parts)
    return WireMessage(FORMAT_VERSION, scheme, s, d, total, data, len(data) * 8)


def decode(msg: WireMessage | bytes) -> list[QuantizedBucket]:
    """Exact inverse of :func:`encode`.

    Padding levels introduced at encode time are collapsed again, so the
    returned tables are strictly increasing. Raises :class:`CodecError`
    on truncation or trailing garbage and
    :class:`UnsupportedSchemeError` for unknown scheme ids (including
    full-precision frames, which have their own parser).
    """
    data = msg.data if isinstance(msg, WireMessage) else bytes(msg)
    version, scheme_id, s, d, total = _parse_header(data)
    scheme = _SCHEME_NAMES.get(scheme_id)
    if scheme is None:
        raise UnsupportedSchemeError(f"unknown scheme id {scheme_id}", 1)
    if total == 0:
        if len(data) != _HEADER.size:
            raise CodecError("trailing bytes after empty message", _HEADER.size)
        return []
    if scheme == "fp":
        raise UnsupportedSchemeError(
            "full-precision frame; use parse_fp_frame", 1
        )
    if d < 1:
        raise CodecError("bucket size must be positive", 4)
    if s < 1:
        raise CodecError("level count must be positive", 2)
    buckets: list[QuantizedBucket] = []
    offset = _HEADER.size
    remaining = total
    while remaining > 0:
        length = min(d, remaining)
        n_words = 0 if s == 1 else -(-length // symbols_per_word(s))
        table_bytes = 4 * s
        word_bytes = 8 * n_words
        if offset + table_bytes + word_bytes > len(data):
            raise CodecError("truncated message", len(data))
        table = np.frombuffer(data, dtype="<f4", count=s, offset=offset)
        offset += table_bytes
        words = np.frombuffer(data, dtype="<u8", count=n_words, offset=offset)
        offset += word_bytes
        table = np.unique(table.astype(np.float32))
        if s == 1:
            indices = np.zeros(length, dtype=np.uint16)
        else:
            indices = _unpack_indices(words, length, s)
        if indices.size and int(indices.max()) >= table.size:
            raise CodecError("index points into level padding", offset)
        levels = LevelSet(table.astype(np.float64), scheme)
        buckets.append(QuantizedBucket(indices, levels, length, table))
        remaining -= length
    if offset != len(data):
        raise CodecError("trailing bytes after message", offset)
    return buckets


def ratio_report(msg: WireMessage | bytes) -> RatioReport:
    """Compression accounting: achieved vs information-theoretic ratio."""
    data = msg.data if isinstance(msg, WireMessage) else bytes(msg)
    _, scheme_id, s, _, total = _parse_header(data)
    if total == 0:
        raise ValueError("ratio is undefined for an empty gradient")
    if scheme_id == 0 or s < 2:
        raise ValueError("ratio is only defined for quantized messages with s >= 2")
    bits = len(data) * 8
    return RatioReport(
        achieved_ratio=32.0 * total / bits,
        theoretical_ratio=32.0 / math.log2(s),
        bits_per_element=bits / total,
    )


def fp_frame(values: np.ndarray, d: int) -> bytes:
    """Serialize a full-precision gradient as raw float64 (scheme id 0)."""
    v = np.asarray(values, dtype="<f8").ravel()
    header = _HEADER.pack(FORMAT_VERSION, SCHEME_IDS["fp"], 0, d, v.size)
    return header + v.tobytes()


def parse_fp_frame(data: bytes) -> np.ndarray:
    version, scheme_id, s, d, total = _parse_header(data)
    if scheme_id != SCHEME_IDS["fp"]:
        raise UnsupportedSchemeError("not a full-precision frame", 1)
    expected = _HEADER.size + 8 * total
    if len(data) != expected:
        raise CodecError("bad full-precision frame length", min(len(data), expected))
    return np.frombuffer(data, dtype="<f8", count=total, offset=_HEADER.size).copy()


def peek_scheme(data: bytes) -> str:
    _, scheme_id, _, _, _ = _parse_header(data)
    scheme = _SCHEME_NAMES.get(scheme_id)
    if scheme is None:
        raise UnsupportedSchemeError(f"unknown scheme id {scheme_id}", 1)
    return scheme


def _parse_header(data: bytes) -> tuple[int, int, int, int, int]:
    if len(data) < _HEADER.size:
        raise CodecError("message shorter than header", len(data))
    version, scheme_id, s, d, total = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise CodecError(f"unsupported format version {version}", 0)
    return version, scheme_id, s, d, total


def _pack_indices(indices: np.ndarray, s: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.uint64).ravel()
    if s == 1:
        return np.zeros(0, dtype=np.uint64)
    m = symbols_per_word(s)
    n_words = -(-idx.size // m)
    padded = np.zeros(n_words * m, dtype=np.uint64)
    padded[: idx.size] = idx
    powers = np.array([s**j for j in range(m)], dtype=np.uint64)
    return (padded.reshape(n_words, m) * powers).sum(axis=1, dtype=np.uint64)


def _unpack_indices(words: np.ndarray, n: int, s: int) -> np.ndarray:
    m = symbols_per_word(s)
    w = np.array(words, dtype=np.uint64)
    out = np.empty((w.size, m), dtype=np.uint16)
    radix = np.uint64(s)
    for j in range(m):
        out[:, j] = (w % radix).astype(np.uint16)
        w //= radix
    return out.reshape(-1)[:n].copy()
