"""Range asymmetric numeral systems (FILO).

Two forms share the same push/pop arithmetic:

* exact: an unbounded Python int, no renormalization (worked-example form);
* streaming: a 64-bit head renormalized through 32-bit words, used in
  production. Payload = words little-endian in emission order, then the
  final head as a little-endian u64.
"""
from __future__ import annotations

import struct
from bisect import bisect_right
from typing import Callable, Iterator, Sequence

from ..prob import QuantizedPmf

WORD_BITS = 32
RANS_L = 1 << WORD_BITS  # lower bound of the normalized head interval
HEAD_LIMIT = 1 << 64
WORD_MASK = (1 << WORD_BITS) - 1
FLUSH_BITS = 64


class RansError(ValueError):
    pass


def rans_push_exact(x: int, q: QuantizedPmf, s: int) -> int:
    count = q.counts[s]
    return (x // count) * q.total + x % count + q.cumulative[s]


def rans_pop_exact(x: int, q: QuantizedPmf) -> tuple[int, int]:
    y = x % q.total
    s = bisect_right(q.cumulative, y) - 1
    return s, (x // q.total) * q.counts[s] + y - q.cumulative[s]


def splitmix64(seed: int) -> Iterator[int]:
    """splitmix64 stream: state += 0x9E3779B97F4A7C15, then the
    (30, 0xBF58476D1CE4E5B9), (27, 0x94D049BB133111EB), 31 xorshift-multiply mix."""
    mask = (1 << 64) - 1
    state = seed & mask
    while True:
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        yield z ^ (z >> 31)


def reservoir_words(seed: int) -> Iterator[int]:
    """Initial bits for bits-back coding: the high 32 bits of each splitmix64 output."""
    for z in splitmix64(seed):
        yield z >> 32


class RansStream:
    """Streaming rANS state: head ``x`` in [2**32, 2**64) plus a word stack.

    If ``reservoir`` is given, pops that run out of words draw from it instead
    of failing; ``borrowed`` counts those words (bits-back initial bits).
    """

    def __init__(self, x: int = RANS_L, words: Sequence[int] | None = None,
                 reservoir: Iterator[int] | Callable[[], int] | None = None):
        self.x = x
        self.words = list(words) if words is not None else []
        self._reservoir = reservoir
        self.borrowed: list[int] = []

    def push(self, q: QuantizedPmf, s: int) -> None:
        count = q.counts[s]
        x = self.x
        # M = 2**precision_bits divides 2**32, so the bound is exact
        bound = ((RANS_L // q.total) << WORD_BITS) * count
        while x >= bound:
            self.words.append(x & WORD_MASK)
            x >>= WORD_BITS
        self.x = (x // count) * q.total + x % count + q.cumulative[s]

    def pop(self, q: QuantizedPmf) -> int:
        x = self.x
        y = x % q.total
        s = bisect_right(q.cumulative, y) - 1
        x = (x // q.total) * q.counts[s] + y - q.cumulative[s]
        while x < RANS_L:
            x = (x << WORD_BITS) | self._next_word()
        self.x = x
        return s

    def _next_word(self) -> int:
        if self.words:
            return self.words.pop()
        if self._reservoir is None:
            raise RansError("word stream underflow")
        r = self._reservoir
        w = next(r) if hasattr(r, "__next__") else r()
        self.borrowed.append(w)
        return w

    def to_bytes(self) -> bytes:
        return struct.pack(f"<{len(self.words)}IQ", *self.words, self.x)

    @classmethod
    def from_bytes(cls, payload: bytes, reservoir=None) -> "RansStream":
        if len(payload) < 8 or len(payload) % 4:
            raise RansError(f"malformed rANS payload of {len(payload)} bytes")
        n = (len(payload) - 8) // 4
        *words, x = struct.unpack(f"<{n}IQ", payload)
        if not RANS_L <= x < HEAD_LIMIT:
            raise RansError("final rANS state outside the normalized interval")
        return cls(x, words, reservoir)

    @property
    def bit_count(self) -> int:
        return WORD_BITS * len(self.words) + FLUSH_BITS


def rans_encode(tables: Sequence[QuantizedPmf], syms: Sequence[int]) -> bytes:
    """Push symbols last-to-first so that decoding yields them first-to-last."""
    st = RansStream()
    for q, s in zip(reversed(tables), reversed(syms)):
        st.push(q, s)
    return st.to_bytes()


def rans_decode(payload: bytes, tables: Sequence[QuantizedPmf]) -> list[int]:
    st = RansStream.from_bytes(payload)
    out = [st.pop(q) for q in tables]
    if st.x != RANS_L or st.words:
        raise RansError("rANS stream not fully consumed")
    return out
