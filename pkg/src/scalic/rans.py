"""Byte-oriented rANS entropy coder (pure-Python fallback).

Integer-only, so output bytes are identical on every platform. The same byte
format is implemented by the native coder; both must stay bit-compatible.

Wire format of a coded buffer:
    u32 BE  symbol count
    u32 BE  payload length in bytes
    u32 BE  CRC-32 (IEEE) of the payload bytes
    payload

Payload layout: the encoder walks the symbols in reverse, emitting renorm
bytes, then appends the final 32-bit state; the whole byte sequence is then
reversed, so the decoder reads the state as the first 4 bytes (big-endian)
and consumes renorm bytes forward.

Tables use 16-bit precision: per-symbol frequencies sum to exactly 2**16 and
every in-alphabet symbol has frequency >= 1.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

PRECISION = 16
PROB_SCALE = 1 << PRECISION
RANS_L = 1 << 23
_HEADER_BYTES = 12


@dataclass(frozen=True)
class CdfTable:
    """Cumulative frequencies: cdf[0] == 0, cdf[-1] == 2**16, strictly increasing."""

    cdf: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.cdf[0] != 0 or self.cdf[-1] != PROB_SCALE:
            raise ValueError("cdf must start at 0 and end at 2**16")
        for a, b in zip(self.cdf, self.cdf[1:]):
            if b <= a:
                raise ValueError("cdf must be strictly increasing")

    @property
    def alphabet_size(self) -> int:
        return len(self.cdf) - 1

    def freq(self, s: int) -> int:
        return self.cdf[s + 1] - self.cdf[s]


def build_table(freqs: Sequence[int]) -> CdfTable:
    """Cumulative table from per-symbol frequencies summing to 2**16."""
    freqs = list(int(f) for f in freqs)
    if sum(freqs) != PROB_SCALE:
        raise ValueError(f"frequencies must sum to {PROB_SCALE}, got {sum(freqs)}")
    cdf = [0]
    for f in freqs:
        cdf.append(cdf[-1] + f)
    return CdfTable(tuple(cdf))


def build_tables(freq_matrix: np.ndarray) -> list[CdfTable]:
    return [build_table(row) for row in np.asarray(freq_matrix)]


@dataclass(frozen=True)
class CodedBuffer:
    data: bytes
    symbol_count: int
    checksum: int

    def to_bytes(self) -> bytes:
        head = (
            self.symbol_count.to_bytes(4, "big")
            + len(self.data).to_bytes(4, "big")
            + self.checksum.to_bytes(4, "big")
        )
        return head + self.data

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CodedBuffer":
        if len(raw) < _HEADER_BYTES:
            raise ValueError("coded buffer truncated: header incomplete")
        count = int.from_bytes(raw[0:4], "big")
        length = int.from_bytes(raw[4:8], "big")
        checksum = int.from_bytes(raw[8:12], "big")
        data = raw[_HEADER_BYTES:_HEADER_BYTES + length]
        if len(data) != length:
            raise ValueError(f"coded buffer truncated: declared {length} bytes, found {len(data)}")
        return cls(data=data, symbol_count=count, checksum=checksum)

    @property
    def wire_length(self) -> int:
        return _HEADER_BYTES + len(self.data)


def encode(symbols: Sequence[int], tables: Sequence[CdfTable]) -> CodedBuffer:
    """Encode symbols, one table per symbol (tables may repeat by reference)."""
    n = len(symbols)
    if len(tables) != n:
        raise ValueError(f"need one table per symbol: {n} symbols, {len(tables)} tables")
    out = bytearray()
    x = RANS_L
    shift = RANS_L >> PRECISION << 8  # renorm threshold factor
    for i in range(n - 1, -1, -1):
        s = symbols[i]
        cdf = tables[i].cdf
        if not 0 <= s < len(cdf) - 1:
            raise ValueError(f"symbol {s} outside alphabet of size {len(cdf) - 1}")
        f = cdf[s + 1] - cdf[s]
        x_max = shift * f
        while x >= x_max:
            out.append(x & 0xFF)
            x >>= 8
        x = ((x // f) << PRECISION) + (x % f) + cdf[s]
    out.append(x & 0xFF)
    out.append((x >> 8) & 0xFF)
    out.append((x >> 16) & 0xFF)
    out.append((x >> 24) & 0xFF)
    data = bytes(reversed(out))
    return CodedBuffer(data=data, symbol_count=n, checksum=zlib.crc32(data))


class RansDecoder:
    """Stateful decoder supporting staged reads from one buffer."""

    def __init__(self, buffer: CodedBuffer):
        if zlib.crc32(buffer.data) != buffer.checksum:
            raise ValueError("coded buffer checksum mismatch")
        if len(buffer.data) < 4:
            raise ValueError("coded buffer too short for decoder state")
        self._data = buffer.data
        self._pos = 4
        self._remaining = buffer.symbol_count
        self.state = int.from_bytes(buffer.data[:4], "big")

    @property
    def remaining(self) -> int:
        return self._remaining

    def decode(self, tables: Sequence[CdfTable]) -> list[int]:
        """Decode len(tables) symbols, advancing the shared state."""
        n = len(tables)
        if n > self._remaining:
            raise ValueError(f"requested {n} symbols, only {self._remaining} remain")
        data = self._data
        pos = self._pos
        x = self.state
        mask = PROB_SCALE - 1
        out = []
        for table in tables:
            cdf = table.cdf
            slot = x & mask
            # binary search: greatest s with cdf[s] <= slot
            lo, hi = 0, len(cdf) - 1
            while hi - lo > 1:
                mid = (lo + hi) >> 1
                if cdf[mid] <= slot:
                    lo = mid
                else:
                    hi = mid
            s = lo
            f = cdf[s + 1] - cdf[s]
            x = f * (x >> PRECISION) + slot - cdf[s]
            while x < RANS_L:
                if pos >= len(data):
                    raise ValueError("coded buffer exhausted before all symbols decoded")
                x = (x << 8) | data[pos]
                pos += 1
            out.append(s)
        self.state = x
        self._pos = pos
        self._remaining -= n
        return out


def decode(buffer: CodedBuffer, tables: Sequence[CdfTable], count: int) -> list[int]:
    """One-shot decode of ``count`` symbols (exact inverse of :func:`encode`)."""
    if count != len(tables):
        raise ValueError("count must equal number of tables")
    if count != buffer.symbol_count:
        raise ValueError(
            f"buffer holds {buffer.symbol_count} symbols, requested {count}"
        )
    return RansDecoder(buffer).decode(tables)


# ---------------------------------------------------------------------------
# Fast paths over flat integer buffers (same wire format). ``cdfs`` is an
# int64 array (T, A+1) of cumulative frequencies, ``table_ids`` maps each
# symbol position to a row. This is also the shape of the foreign-function
# boundary: (build_tables, encode, decode) over flat integer buffers.
# ---------------------------------------------------------------------------

def cumulative_freqs(freq_matrix: np.ndarray) -> np.ndarray:
    """(T, A) frequencies summing to 2**16 -> (T, A+1) cumulative tables."""
    freqs = np.asarray(freq_matrix, dtype=np.int64)
    if (freqs <= 0).any():
        raise ValueError("all frequencies must be positive")
    if (freqs.sum(axis=-1) != PROB_SCALE).any():
        raise ValueError(f"each table must sum to {PROB_SCALE}")
    out = np.zeros((freqs.shape[0], freqs.shape[1] + 1), dtype=np.int64)
    np.cumsum(freqs, axis=-1, out=out[:, 1:])
    return out


def encode_indexed(symbols: np.ndarray, cdfs: np.ndarray, table_ids: np.ndarray) -> CodedBuffer:
    symbols = np.asarray(symbols, dtype=np.int64)
    table_ids = np.asarray(table_ids, dtype=np.int64)
    n = symbols.shape[0]
    if table_ids.shape[0] != n:
        raise ValueError("need one table id per symbol")
    if (symbols < 0).any() or (symbols >= cdfs.shape[1] - 1).any():
        raise ValueError("symbol outside alphabet")
    lo = cdfs[table_ids, symbols]
    fr = cdfs[table_ids, symbols + 1] - lo
    lo_list = lo.tolist()
    fr_list = fr.tolist()
    out = bytearray()
    x = RANS_L
    shift = RANS_L >> PRECISION << 8
    for i in range(n - 1, -1, -1):
        f = fr_list[i]
        x_max = shift * f
        while x >= x_max:
            out.append(x & 0xFF)
            x >>= 8
        x = ((x // f) << PRECISION) + (x % f) + lo_list[i]
    out.append(x & 0xFF)
    out.append((x >> 8) & 0xFF)
    out.append((x >> 16) & 0xFF)
    out.append((x >> 24) & 0xFF)
    data = bytes(reversed(out))
    return CodedBuffer(data=data, symbol_count=n, checksum=zlib.crc32(data))


class IndexedDecoder:
    """Stateful decoder over cumulative-table matrices (staged reads)."""

    def __init__(self, buffer: CodedBuffer):
        if zlib.crc32(buffer.data) != buffer.checksum:
            raise ValueError("coded buffer checksum mismatch")
        if len(buffer.data) < 4:
            raise ValueError("coded buffer too short for decoder state")
        self._data = buffer.data
        self._pos = 4
        self._remaining = buffer.symbol_count
        self.state = int.from_bytes(buffer.data[:4], "big")

    def decode(self, cdfs: np.ndarray, table_ids: np.ndarray) -> np.ndarray:
        table_ids = np.asarray(table_ids, dtype=np.int64)
        n = table_ids.shape[0]
        if n > self._remaining:
            raise ValueError(f"requested {n} symbols, only {self._remaining} remain")
        data = self._data
        pos = self._pos
        x = self.state
        mask = PROB_SCALE - 1
        out = np.empty(n, dtype=np.int64)
        rows = [None] * cdfs.shape[0]
        ids = table_ids.tolist()
        for i in range(n):
            tid = ids[i]
            row = rows[tid]
            if row is None:
                row = rows[tid] = cdfs[tid]
            slot = x & mask
            s = int(np.searchsorted(row, slot, side="right")) - 1
            lo = int(row[s])
            f = int(row[s + 1]) - lo
            x = f * (x >> PRECISION) + slot - lo
            while x < RANS_L:
                if pos >= len(data):
                    raise ValueError("coded buffer exhausted before all symbols decoded")
                x = (x << 8) | data[pos]
                pos += 1
            out[i] = s
        self.state = x
        self._pos = pos
        self._remaining -= n
        return out
