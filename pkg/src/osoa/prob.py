"""Probability mass functions and their integer quantization for entropy coders."""
from __future__ import annotations

import math
import struct
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PMF_ATOL = 1e-9
MAX_PRECISION_BITS = 16


class PmfError(ValueError):
    pass


@dataclass(frozen=True)
class Alphabet:
    size: int

    def __post_init__(self):
        if self.size < 2:
            raise PmfError(f"alphabet needs at least 2 symbols, got {self.size}")

    def __contains__(self, s) -> bool:
        return isinstance(s, (int, np.integer)) and 0 <= s < self.size


@dataclass(frozen=True)
class Pmf:
    probs: tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if not probs:
            raise PmfError("empty pmf")
        if any(not math.isfinite(p) or p < 0 for p in probs):
            raise PmfError("probabilities must be finite and nonnegative")
        if abs(math.fsum(probs) - 1.0) > PMF_ATOL:
            raise PmfError(f"probabilities sum to {math.fsum(probs)!r}, not 1")

    @classmethod
    def uniform(cls, n: int) -> "Pmf":
        return cls((1.0 / n,) * n)

    def __len__(self) -> int:
        return len(self.probs)


@dataclass(frozen=True)
class QuantizedPmf:
    """Integer counts ``counts[i]`` summing to ``total``; symbol i owns
    ``[cumulative[i], cumulative[i] + counts[i])``."""

    counts: tuple[int, ...]
    total: int
    precision_bits: int | None = None
    cumulative: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if not counts:
            raise PmfError("empty count table")
        if any(c < 1 for c in counts):
            raise PmfError("every symbol needs a count of at least 1")
        if sum(counts) != self.total:
            raise PmfError(f"counts sum to {sum(counts)}, expected {self.total}")
        if self.precision_bits is not None and self.total != 1 << self.precision_bits:
            raise PmfError("total must equal 2**precision_bits")
        cum = [0] * len(counts)
        acc = 0
        for i, c in enumerate(counts):
            cum[i] = acc
            acc += c
        object.__setattr__(self, "cumulative", tuple(cum))

    @classmethod
    def from_counts(cls, counts: Sequence[int]) -> "QuantizedPmf":
        """Arbitrary-total constructor (e.g. M=100 tables from worked examples)."""
        total = sum(int(c) for c in counts)
        bits = total.bit_length() - 1
        return cls(tuple(counts), total, bits if total == 1 << bits else None)

    @classmethod
    def _unchecked(cls, counts: tuple[int, ...], precision_bits: int,
                   cumulative: tuple[int, ...]) -> "QuantizedPmf":
        """Skip validation for rows produced by the apportioner itself."""
        q = object.__new__(cls)
        object.__setattr__(q, "counts", counts)
        object.__setattr__(q, "total", 1 << precision_bits)
        object.__setattr__(q, "precision_bits", precision_bits)
        object.__setattr__(q, "cumulative", cumulative)
        return q

    def __len__(self) -> int:
        return len(self.counts)

    def probability(self, s: int) -> float:
        return self.counts[s] / self.total

    def to_pmf(self) -> Pmf:
        return Pmf(tuple(c / self.total for c in self.counts))

    def to_bytes(self) -> bytes:
        if self.precision_bits is None:
            raise PmfError("only power-of-two tables are serializable")
        # counts must fit u16: a lone symbol at 16-bit precision (count 65536) is not serializable
        return bytes([self.precision_bits]) + struct.pack(f"<{len(self.counts)}H", *self.counts)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "QuantizedPmf":
        if len(raw) < 1 or (len(raw) - 1) % 2:
            raise PmfError("malformed quantized pmf")
        bits = raw[0]
        counts = struct.unpack(f"<{(len(raw) - 1) // 2}H", raw[1:])
        return cls(counts, 1 << bits, bits)


def _apportion(probs: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder apportionment of each row of ``probs`` to ``total``.

    Every count is clamped to >= 1. A positive deficit goes one unit at a time
    to the largest fractional remainders (ties: lower index first). A negative
    one (caused by the clamp) is taken from counts > 1 with the smallest
    remainders first (ties: lower index first).
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    n_rows, n = probs.shape
    if n > total:
        raise PmfError(f"alphabet of {n} symbols cannot fit into total {total}")
    scaled = probs * total
    base = np.floor(scaled)
    rem = scaled - base
    counts = np.maximum(base.astype(np.int64), 1)
    deficit = total - counts.sum(axis=1)
    idx = np.arange(n)
    # stable sort keeps equal remainders in index order
    order_desc = np.argsort(-rem, axis=1, kind="stable")
    rank = np.empty_like(order_desc)
    np.put_along_axis(rank, order_desc, np.broadcast_to(idx, probs.shape), axis=1)
    pos = np.maximum(deficit, 0)
    counts += (pos // n)[:, None] + (rank < (pos % n)[:, None])
    for r in np.nonzero(deficit < 0)[0]:
        d = int(deficit[r])
        order = np.lexsort((idx, rem[r]))
        while d < 0:
            for j in order:
                if counts[r, j] > 1:
                    counts[r, j] -= 1
                    d += 1
                    if d == 0:
                        break
    return counts


def quantize_rows(probs: np.ndarray, precision_bits: int) -> np.ndarray:
    """Vectorized :func:`quantize_pmf` over the rows of a 2-D array; returns int64 counts."""
    _check_precision(precision_bits)
    return _apportion(probs, 1 << precision_bits)


def quantize_pmf(pmf: Pmf | Sequence[float], precision_bits: int) -> QuantizedPmf:
    _check_precision(precision_bits)
    probs = pmf.probs if isinstance(pmf, Pmf) else Pmf(tuple(pmf)).probs
    counts = _apportion(np.array(probs), 1 << precision_bits)[0]
    return QuantizedPmf(tuple(counts.tolist()), 1 << precision_bits, precision_bits)


def quantize_to_total(pmf: Pmf | Sequence[float], total: int) -> QuantizedPmf:
    """Same apportionment rule with an arbitrary total; for replaying worked examples."""
    probs = pmf.probs if isinstance(pmf, Pmf) else Pmf(tuple(pmf)).probs
    counts = _apportion(np.array(probs), total)[0]
    return QuantizedPmf.from_counts(counts.tolist())


def _check_precision(precision_bits: int) -> None:
    if not 2 <= precision_bits <= MAX_PRECISION_BITS:
        raise PmfError(f"precision_bits must be in [2, {MAX_PRECISION_BITS}], got {precision_bits}")


def inverse_cumulative(q: QuantizedPmf, y: int) -> int:
    if not 0 <= y < q.total:
        raise PmfError(f"{y} outside [0, {q.total})")
    return bisect_right(q.cumulative, y) - 1


def entropy_bits(pmf: Pmf) -> float:
    return -math.fsum(p * math.log2(p) for p in pmf.probs if p > 0)


def cross_entropy_bits(p: Pmf, q: Pmf) -> float:
    if len(p) != len(q):
        raise PmfError("pmfs over different alphabets")
    terms = []
    for pi, qi in zip(p.probs, q.probs):
        if pi > 0:
            if qi <= 0:
                raise PmfError("q assigns zero probability where p does not")
            terms.append(pi * math.log2(qi))
    return -math.fsum(terms)


def kl_bits(p: Pmf, q: Pmf) -> float:
    return cross_entropy_bits(p, q) - entropy_bits(p)
