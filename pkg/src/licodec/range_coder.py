"""Deterministic byte-oriented range coder driven by quantized CDF tables.

State is 64-bit low / 32-bit range with byte-wise renormalization and carry
propagation by byte stuffing. The flush settles the final state and trims
trailing zero bytes; the decoder treats reads past the end of a segment as
zeros, so trimmed and untrimmed segments decode identically. Near-certain
symbol streams therefore cost almost nothing (a flush is at most 5 bytes,
usually fewer after trimming).

Decoding with a CDF sequence other than the one used for encoding yields
undefined symbols (never memory-unsafe behavior) and is not detectable in
general; framing errors are caught at the container level where segment
lengths are recorded.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import BitstreamError


@dataclass(frozen=True)
class EncodedSegment:
    data: bytes
    symbol_count: int


def _table_arrays(cdfs):
    """Flatten a sequence of QuantizedCdf (or one reused table) to coder arrays."""
    if not len(cdfs):
        return (np.array([], dtype=np.uint32), np.array([], dtype=np.int64),
                np.array([], dtype=np.int32))
    flat = np.concatenate([np.asarray(c.cum, dtype=np.uint32) for c in cdfs])
    lens = np.fromiter((len(c.cum) for c in cdfs), dtype=np.int32, count=len(cdfs))
    starts = np.zeros(len(cdfs), dtype=np.int64)
    np.cumsum(lens[:-1], out=starts[1:])
    return flat, starts, lens


def rc_encode(symbols, cdfs) -> EncodedSegment:
    """Encode integer symbols, one CDF table per symbol (same length)."""
    syms = np.asarray(symbols, dtype=np.int32)
    if len(cdfs) != len(syms):
        raise ValueError(f"{len(syms)} symbols but {len(cdfs)} CDF tables")
    rebased = np.empty(len(syms), dtype=np.int32)
    for i, c in enumerate(cdfs):
        rebased[i] = syms[i] - c.lo
    flat, starts, lens = _table_arrays(cdfs)
    data = backend.rc_encode(rebased, flat, starts, lens)
    return EncodedSegment(data=data, symbol_count=len(syms))


def rc_decode(segment: EncodedSegment, cdfs):
    """Decode exactly ``segment.symbol_count`` symbols with the given tables."""
    if len(cdfs) < segment.symbol_count:
        raise ValueError(f"segment holds {segment.symbol_count} symbols but only "
                         f"{len(cdfs)} CDF tables were supplied")
    if len(cdfs) > segment.symbol_count:
        raise BitstreamError(f"bitstream exhausted: segment holds "
                             f"{segment.symbol_count} symbols, {len(cdfs)} requested")
    flat, starts, lens = _table_arrays(cdfs)
    raw = decode_raw(segment.data, flat, starts, lens)
    out = np.empty(len(cdfs), dtype=np.int64)
    for i, c in enumerate(cdfs):
        out[i] = int(raw[i]) + c.lo
    return out


def encode_raw(rebased_syms, flat, starts, lens) -> bytes:
    """Array-level encode: symbols already rebased to table-local indices."""
    return backend.rc_encode(
        np.ascontiguousarray(rebased_syms, dtype=np.int32),
        np.ascontiguousarray(flat, dtype=np.uint32),
        np.ascontiguousarray(starts, dtype=np.int64),
        np.ascontiguousarray(lens, dtype=np.int32),
    )


def decode_raw(data, flat, starts, lens):
    """Array-level decode returning table-local symbol indices (int32)."""
    return backend.rc_decode(
        np.frombuffer(bytes(data), dtype=np.uint8),
        np.ascontiguousarray(flat, dtype=np.uint32),
        np.ascontiguousarray(starts, dtype=np.int64),
        np.ascontiguousarray(lens, dtype=np.int32),
    )


class StepDecoder:
    """One-symbol-at-a-time decoder over a single segment.

    State transitions are the same integer operations as the batch decoder,
    so interleaving table construction with decoding (the serial reference
    mode) yields identical symbols.
    """

    _TOP = 1 << 24

    def __init__(self, data):
        self._data = bytes(data)
        self._pos = 0
        self._code = 0
        self._rng = 0xFFFFFFFF
        for _ in range(4):
            self._code = (self._code << 8) | self._next_byte()

    def _next_byte(self):
        b = self._data[self._pos] if self._pos < len(self._data) else 0
        self._pos += 1
        return b

    def step(self, cum) -> int:
        """Decode one symbol under cumulative table ``cum`` (table-local index)."""
        total = int(cum[-1])
        r = self._rng // total
        v = self._code // r
        if v >= total:
            v = total - 1
        lo_i, hi_i = 0, len(cum) - 1
        while hi_i - lo_i > 1:
            mid = (lo_i + hi_i) >> 1
            if int(cum[mid]) <= v:
                lo_i = mid
            else:
                hi_i = mid
        s = lo_i
        c0 = int(cum[s])
        freq = int(cum[s + 1]) - c0
        if freq <= 0:
            raise BitstreamError(f"zero-mass symbol {s} while stepping decoder")
        self._code -= c0 * r
        self._rng = r * freq
        while self._rng < self._TOP:
            self._code = ((self._code << 8) | self._next_byte()) & 0xFFFFFFFFFF
            self._rng = (self._rng << 8) & 0xFFFFFFFF
        return s
