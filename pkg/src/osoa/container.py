"""Single-file OSOA container.

Layout (all little-endian)::

    header   "OSC1" version u8 coder u8 bits_back u8 precision u8
             batch_size u32 chunk_size u32 data_length u64
             optimizer u8 lr f64 beta1 f64 beta2 f64 eps f64
             updates_per_batch u32 early_stop u32 seed u64 base_checksum u64
    table    chunk_count u32, then per chunk:
             offset u64 length u64 first_batch u32 last_batch u32
             param_checksum u64 payload_crc32 u32
    payloads concatenated; offsets are relative to the end of the table

``early_stop`` stores step + 1 so that 0 can mean "no early stopping".
Batch indices in the table are 0-based and inclusive.
"""
from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass, field

from .adapt import AdaptationSchedule, OptimizerConfig, OptimizerKind

MAGIC = b"OSC1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sBBBBIIQB4dIIQQ")
_COUNT = struct.Struct("<I")
_ENTRY = struct.Struct("<QQIIQI")


class Coder(enum.IntEnum):
    AC = 0  # FIFO
    RANS = 1  # FILO


class ContainerError(Exception):
    exit_code = 2


class FormatError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class ChecksumError(ContainerError):
    exit_code = 3

    def __init__(self, message: str, chunk_index: int | None = None):
        super().__init__(message)
        self.chunk_index = chunk_index


@dataclass(frozen=True)
class ContainerHeader:
    coder: Coder
    bits_back: bool
    precision_bits: int
    batch_size: int
    chunk_size: int
    data_length: int
    optimizer: OptimizerConfig
    schedule: AdaptationSchedule
    seed: int
    base_checksum: int
    format_version: int = FORMAT_VERSION

    @property
    def num_batches(self) -> int:
        return -(-self.data_length // self.batch_size)

    def batch_length(self, t: int) -> int:
        """Length of 0-based batch ``t``."""
        return min(self.batch_size, self.data_length - t * self.batch_size)

    def pack(self) -> bytes:
        o, s = self.optimizer, self.schedule
        early = 0 if s.early_stop_step is None else s.early_stop_step + 1
        return _HEADER.pack(MAGIC, self.format_version, int(self.coder), int(self.bits_back),
                            self.precision_bits, self.batch_size, self.chunk_size, self.data_length,
                            int(o.kind), o.learning_rate, o.beta1, o.beta2, o.epsilon,
                            s.updates_per_batch, early, self.seed, self.base_checksum)

    @classmethod
    def unpack(cls, raw: bytes) -> "ContainerHeader":
        if len(raw) < 4 or raw[:4] != MAGIC:
            raise FormatError("bad magic: not an OSOA container")
        if len(raw) < _HEADER.size:
            raise TruncatedError("container header truncated")
        (_, version, coder, bb, prec, bsz, csz, n, kind, lr, b1, b2, eps,
         upb, early, seed, base) = _HEADER.unpack_from(raw)
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}")
        try:
            coder = Coder(coder)
            kind = OptimizerKind(kind)
            optimizer = OptimizerConfig(kind, lr, b1, b2, eps)
            schedule = AdaptationSchedule(upb, None if early == 0 else early - 1)
        except ValueError as e:
            raise FormatError(f"invalid header field: {e}") from None
        if bb not in (0, 1) or not 2 <= prec <= 16 or bsz < 1 or csz < 1:
            raise FormatError("header field out of range")
        if bb and coder is not Coder.RANS:
            raise FormatError("bits-back requires the rANS coder")
        return cls(coder, bool(bb), prec, bsz, csz, n, optimizer, schedule, seed, base, version)


@dataclass(frozen=True)
class ChunkEntry:
    first_batch: int
    last_batch: int
    param_checksum: int
    offset: int = 0
    length: int = 0
    payload_crc: int = 0


@dataclass
class OsoaContainer:
    header: ContainerHeader
    chunks: list[ChunkEntry] = field(default_factory=list)
    payloads: list[bytes] = field(default_factory=list)


def write_container(c: OsoaContainer) -> bytes:
    if len(c.chunks) != len(c.payloads):
        raise ValueError("chunk table and payload list differ in length")
    table = [_COUNT.pack(len(c.chunks))]
    offset = 0
    for e, p in zip(c.chunks, c.payloads):
        table.append(_ENTRY.pack(offset, len(p), e.first_batch, e.last_batch,
                                 e.param_checksum, zlib.crc32(p)))
        offset += len(p)
    return c.header.pack() + b"".join(table) + b"".join(c.payloads)


def read_container(raw: bytes) -> OsoaContainer:
    header = ContainerHeader.unpack(raw)
    pos = _HEADER.size
    if len(raw) < pos + _COUNT.size:
        raise TruncatedError("chunk table truncated")
    (count,) = _COUNT.unpack_from(raw, pos)
    pos += _COUNT.size
    if len(raw) < pos + count * _ENTRY.size:
        raise TruncatedError("chunk table truncated")
    entries = [ChunkEntry(*_reorder(_ENTRY.unpack_from(raw, pos + i * _ENTRY.size)))
               for i in range(count)]
    base = pos + count * _ENTRY.size
    _validate_table(header, entries)
    payloads = []
    for i, e in enumerate(entries):
        start = base + e.offset
        if start + e.length > len(raw):
            raise TruncatedError(f"payload of chunk {i} truncated")
        p = raw[start:start + e.length]
        if zlib.crc32(p) != e.payload_crc:
            raise ChecksumError(f"payload checksum mismatch in chunk {i}", i)
        payloads.append(p)
    return OsoaContainer(header, entries, payloads)


def _reorder(fields):
    offset, length, first, last, checksum, crc = fields
    return first, last, checksum, offset, length, crc


def _validate_table(header: ContainerHeader, entries: list[ChunkEntry]) -> None:
    expected_next = 0
    prev_offset = -1
    for i, e in enumerate(entries):
        if e.offset <= prev_offset:
            raise FormatError(f"chunk {i}: offsets not strictly increasing")
        if e.first_batch != expected_next or e.last_batch < e.first_batch:
            raise FormatError(f"chunk {i}: batch ranges do not partition the stream")
        prev_offset = e.offset
        expected_next = e.last_batch + 1
    if expected_next != header.num_batches:
        raise FormatError("chunk table does not cover every batch")
    if header.coder is Coder.AC and len(entries) != 1:
        raise FormatError("arithmetic-coded containers hold exactly one chunk")


def split_container(c: OsoaContainer) -> list[bytes]:
    """One standalone file per chunk; :func:`merge_containers` reverses this."""
    return [write_container(OsoaContainer(c.header, [e], [p])) for e, p in zip(c.chunks, c.payloads)]


def merge_containers(parts: list[bytes]) -> OsoaContainer:
    header = None
    chunks, payloads = [], []
    for raw in parts:
        header_i = ContainerHeader.unpack(raw)
        if header is not None and header_i != header:
            raise FormatError("chunk files come from different streams")
        header = header_i
        pos = _HEADER.size
        (count,) = _COUNT.unpack_from(raw, pos)
        base = pos + _COUNT.size + count * _ENTRY.size
        for i in range(count):
            e = ChunkEntry(*_reorder(_ENTRY.unpack_from(raw, pos + _COUNT.size + i * _ENTRY.size)))
            p = raw[base + e.offset:base + e.offset + e.length]
            if len(p) != e.length:
                raise TruncatedError("chunk payload truncated")
            if zlib.crc32(p) != e.payload_crc:
                raise ChecksumError(f"payload checksum mismatch in chunk starting at batch {e.first_batch}")
            chunks.append(e)
            payloads.append(p)
    if header is None:
        raise FormatError("no chunk files given")
    order = sorted(range(len(chunks)), key=lambda i: chunks[i].first_batch)
    merged = OsoaContainer(header, [chunks[i] for i in order], [payloads[i] for i in order])
    return read_container(write_container(merged))


def describe(c: OsoaContainer) -> str:
    h = c.header
    lines = [
        f"format        OSC1 v{h.format_version}",
        f"coder         {h.coder.name}{' + bits-back' if h.bits_back else ''}",
        f"precision     {h.precision_bits} bits",
        f"data length   {h.data_length} symbols in {h.num_batches} batches of {h.batch_size}",
        f"chunk size    {h.chunk_size}",
        f"optimizer     {h.optimizer.kind.name} lr={h.optimizer.learning_rate:g} "
        f"beta1={h.optimizer.beta1:g} beta2={h.optimizer.beta2:g} eps={h.optimizer.epsilon:g}",
        f"schedule      {h.schedule.updates_per_batch} update(s)/batch, early stop "
        f"{'none' if h.schedule.early_stop_step is None else h.schedule.early_stop_step}",
        f"seed          {h.seed}",
        f"base model    {h.base_checksum:016x}",
        f"chunks        {len(c.chunks)}",
    ]
    for i, (e, p) in enumerate(zip(c.chunks, c.payloads)):
        lines.append(f"  [{i}] batches {e.first_batch}-{e.last_batch} offset {e.offset} "
                     f"length {len(p)} params {e.param_checksum:016x} crc {e.payload_crc:08x}")
    return "\n".join(lines)
