"""Integer arithmetic coder (FIFO) with pending-bit (E3) renormalization.

Bits are emitted most-significant-bit first; the decoder reads past the end of
the stream as zeros, so the symbol count must be known to the decoder.
"""
from __future__ import annotations

from bisect import bisect_right
from fractions import Fraction
from typing import Iterable, Sequence

from ..prob import QuantizedPmf

STATE_BITS = 32
FULL = (1 << STATE_BITS) - 1
HALF = 1 << (STATE_BITS - 1)
QUARTER = 1 << (STATE_BITS - 2)
THREE_QUARTERS = HALF + QUARTER


class ArithmeticCodingError(ValueError):
    pass


class AcEncoder:
    def __init__(self):
        self.low = 0
        self.high = FULL  # inclusive
        self.pending_bits = 0
        self.bits: list[int] = []
        self.symbols = 0
        self._finished = False

    def _emit(self, bit: int) -> None:
        self.bits.append(bit)
        if self.pending_bits:
            self.bits.extend([bit ^ 1] * self.pending_bits)
            self.pending_bits = 0

    def encode_symbol(self, q: QuantizedPmf, s: int) -> None:
        span = self.high - self.low + 1
        start = q.cumulative[s]
        self.high = self.low + span * (start + q.counts[s]) // q.total - 1
        self.low = self.low + span * start // q.total
        while True:
            if self.high < HALF:
                self._emit(0)
            elif self.low >= HALF:
                self._emit(1)
                self.low -= HALF
                self.high -= HALF
            elif self.low >= QUARTER and self.high < THREE_QUARTERS:
                self.pending_bits += 1
                self.low -= QUARTER
                self.high -= QUARTER
            else:
                break
            self.low <<= 1
            self.high = (self.high << 1) | 1
        self.symbols += 1

    def finish(self) -> bytes:
        if not self._finished:
            # two more bits select a point inside [low, high] once zero-padded
            self.pending_bits += 1
            self._emit(0 if self.low < QUARTER else 1)
            self._finished = True
        return bits_to_bytes(self.bits)

    @property
    def bit_count(self) -> int:
        return len(self.bits) + self.pending_bits


class AcDecoder:
    def __init__(self, payload: bytes):
        self._data = payload
        self._nbits = 8 * len(payload)
        self._pos = 0
        self.low = 0
        self.high = FULL
        self.value = 0
        for _ in range(STATE_BITS):
            self.value = (self.value << 1) | self._read_bit()

    def _read_bit(self) -> int:
        pos = self._pos
        self._pos += 1
        if pos < self._nbits:
            return (self._data[pos >> 3] >> (7 - (pos & 7))) & 1
        if pos >= self._nbits + STATE_BITS:
            raise ArithmeticCodingError("bit stream exhausted mid-symbol")
        return 0

    def decode_symbol(self, q: QuantizedPmf) -> int:
        span = self.high - self.low + 1
        target = ((self.value - self.low + 1) * q.total - 1) // span
        s = _find(q, target)
        start = q.cumulative[s]
        self.high = self.low + span * (start + q.counts[s]) // q.total - 1
        self.low = self.low + span * start // q.total
        while True:
            if self.high < HALF:
                pass
            elif self.low >= HALF:
                self.low -= HALF
                self.high -= HALF
                self.value -= HALF
            elif self.low >= QUARTER and self.high < THREE_QUARTERS:
                self.low -= QUARTER
                self.high -= QUARTER
                self.value -= QUARTER
            else:
                break
            self.low <<= 1
            self.high = (self.high << 1) | 1
            self.value = (self.value << 1) | self._read_bit()
        return s


def _find(q: QuantizedPmf, target: int) -> int:
    if not 0 <= target < q.total:
        raise ArithmeticCodingError("code value outside the current interval")
    return bisect_right(q.cumulative, target) - 1


def bits_to_bytes(bits: Sequence[int]) -> bytes:
    out = bytearray((len(bits) + 7) // 8)
    for i, b in enumerate(bits):
        if b:
            out[i >> 3] |= 0x80 >> (i & 7)
    return bytes(out)


def ac_encode(tables: Iterable[QuantizedPmf], syms: Sequence[int]) -> bytes:
    enc = AcEncoder()
    for q, s in zip(tables, syms):
        enc.encode_symbol(q, s)
    return enc.finish()


def ac_decode(payload: bytes, tables: Iterable[QuantizedPmf]) -> list[int]:
    dec = AcDecoder(payload)
    return [dec.decode_symbol(q) for q in tables]


def ac_exact_interval(q: QuantizedPmf, syms: Sequence[int]) -> tuple[Fraction, Fraction]:
    """Exact rational interval left after subdividing [0, 1) once per symbol."""
    if not syms:
        raise ArithmeticCodingError("need at least one symbol")
    low, high = Fraction(0), Fraction(1)
    for s in syms:
        width = high - low
        low, high = (
            low + width * Fraction(q.cumulative[s], q.total),
            low + width * Fraction(q.cumulative[s] + q.counts[s], q.total),
        )
    return low, high


def ac_exact_decode(tables: Sequence[QuantizedPmf], value: Fraction) -> list[int]:
    """Reference decoder: locate ``value`` in successive rational subintervals."""
    out = []
    low, high = Fraction(0), Fraction(1)
    for q in tables:
        width = high - low
        y = (value - low) / width * q.total
        s = _find(q, int(y))
        out.append(s)
        low, high = (
            low + width * Fraction(q.cumulative[s], q.total),
            low + width * Fraction(q.cumulative[s] + q.counts[s], q.total),
        )
    return out

