"""Byte-oriented range coder.

64-bit carry-less variant: `low`/`range` live in 64 bits, probabilities are
16-bit cumulative frequencies (tables sum to exactly 2^16), and
renormalization emits whole bytes. When the top bytes of `low` and
`low + range` agree the byte is settled and flushed; if the range underflows
below 2^48 first, it is truncated to the byte boundary so a byte can still be
released (the classic carry-free compromise, costing a fraction of a bit).

Encoding is fully deterministic. Decoding consumes the same byte count the
encoder produced; running out of bytes mid-stream raises `BitstreamError`
(truncated input), and corrupt bytes decode to wrong symbols but never crash.

Wire interface: symbols are validated against per-channel cumulative tables
(`cdf` rows of length width+1 with cdf[0] = 0 and cdf[-1] = 2^16).
"""

from __future__ import annotations

from bisect import bisect_right

import numpy as np

from .errors import BitstreamError, EncodeError

PRECISION = 64
TOP = 1 << (PRECISION - 8)       # byte-agreement threshold
BOTTOM = 1 << (PRECISION - 16)   # renormalization floor; >= max table total
MASK = (1 << PRECISION) - 1
TOTAL_BITS = 16
TOTAL = 1 << TOTAL_BITS
FLUSH_BYTES = PRECISION // 8


def _normalize_tables(tables) -> list[list[int]]:
    """Accept CdfTables, a 2-D array, or a single row; return list-of-list rows."""
    rows = tables.rows() if hasattr(tables, "rows") else np.atleast_2d(np.asarray(tables))
    if not isinstance(rows, list):
        rows = [r.tolist() for r in rows]
    for r in rows:
        if r[0] != 0 or r[-1] != TOTAL:
            raise EncodeError("table rows must run from 0 to 2^16")
        if any(b <= a for a, b in zip(r, r[1:])):
            raise EncodeError("table rows must be strictly increasing")
    return rows


def range_encode(symbols, tables, channels=None) -> bytes:
    """Encode `symbols` (table indices) under per-channel cumulative tables.

    `channels[i]` selects the table row for symbol i (default: row 0 for all).
    Returns the payload bytes; an empty symbol list yields just the flush
    sequence (8 bytes).
    """
    rows = _normalize_tables(tables)
    syms = np.asarray(symbols, dtype=np.int64).tolist()
    if channels is None:
        chans = [0] * len(syms)
    else:
        chans = np.asarray(channels, dtype=np.int64).tolist()
        if len(chans) != len(syms):
            raise EncodeError("channels and symbols length mismatch")

    out = bytearray()
    low = 0
    rng = MASK
    for i, (s, c) in enumerate(zip(syms, chans)):
        row = rows[c]
        if not 0 <= s < len(row) - 1:
            raise EncodeError(f"symbol index {s} at position {i} outside table support")
        r = rng >> TOTAL_BITS
        low += row[s] * r
        rng = (row[s + 1] - row[s]) * r
        while True:
            if (low ^ (low + rng)) < TOP:
                pass
            elif rng < BOTTOM:
                rng = (-low) & (BOTTOM - 1)
            else:
                break
            out.append((low >> (PRECISION - 8)) & 0xFF)
            low = (low << 8) & MASK
            rng = rng << 8
    for _ in range(FLUSH_BYTES):
        out.append((low >> (PRECISION - 8)) & 0xFF)
        low = (low << 8) & MASK
    return bytes(out)


def range_decode(data: bytes, tables, count: int, channels=None) -> np.ndarray:
    """Recover `count` symbols from `range_encode` output under the same tables.

    Raises `BitstreamError` if the stream is exhausted early.
    """
    rows = _normalize_tables(tables)
    if channels is None:
        chans = [0] * count
    else:
        chans = np.asarray(channels, dtype=np.int64).tolist()
        if len(chans) != count:
            raise BitstreamError("channels and count mismatch")

    if len(data) < FLUSH_BYTES:
        raise BitstreamError("truncated stream: missing initial code bytes")
    pos = 0
    code = 0
    for _ in range(FLUSH_BYTES):
        code = (code << 8) | data[pos]
        pos += 1
    low = 0
    rng = MASK
    out = np.empty(count, dtype=np.int32)
    for i in range(count):
        row = rows[chans[i]]
        r = rng >> TOTAL_BITS
        cum = (code - low) // r
        if cum >= TOTAL:
            cum = TOTAL - 1
        s = bisect_right(row, cum) - 1
        out[i] = s
        low += row[s] * r
        rng = (row[s + 1] - row[s]) * r
        while True:
            if (low ^ (low + rng)) < TOP:
                pass
            elif rng < BOTTOM:
                rng = (-low) & (BOTTOM - 1)
            else:
                break
            if pos >= len(data):
                raise BitstreamError(
                    f"truncated stream: exhausted after {i + 1}/{count} symbols")
            code = ((code << 8) | data[pos]) & MASK
            pos += 1
            low = (low << 8) & MASK
            rng = rng << 8
    return out
