"""One-shot online adaptation: code batch t with the model adapted on batches
1..t-1, on both the encoder and the decoder side.

FIFO (arithmetic coding) encodes each batch immediately. FILO (rANS) caches
(parameter snapshot, batch) pairs and flushes them in reverse every
``chunk_size`` batches, so the decoder still sees B_1, B_2, ... in order.
"""
from __future__ import annotations

from concurrent.futures import Executor, Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .adapt import AdaptationSchedule, Dynamics, OptimizerConfig
from .coders.arithmetic import AcDecoder, AcEncoder
from .coders.rans import RANS_L, RansError, RansStream, reservoir_words, splitmix64
from .container import (
    ChecksumError,
    ChunkEntry,
    Coder,
    ContainerHeader,
    OsoaContainer,
    read_container,
    write_container,
)
from .models import (
    ModelParams,
    ToyVaeParams,
    VaeCodingTables,
    coding_tables,
    marginal_pmf,
    mean_elbo_bits,
    nll_bits,
    param_checksum,
)

class OsoaError(ValueError):
    pass


@dataclass(frozen=True)
class OsoaConfig:
    coder: Coder = Coder.RANS
    bits_back: bool = False
    precision_bits: int = 16
    batch_size: int = 256
    chunk_size: int = 8
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: AdaptationSchedule = field(default_factory=AdaptationSchedule)
    seed: int = 0
    background_flush: bool = False

    def __post_init__(self):
        object.__setattr__(self, "coder", Coder(self.coder))
        if self.bits_back and self.coder is not Coder.RANS:
            raise OsoaError("bits-back coding requires the rANS (FILO) coder")
        if not 2 <= self.precision_bits <= 16:
            raise OsoaError("precision_bits must be in [2, 16]")
        if self.batch_size < 1 or self.chunk_size < 1:
            raise OsoaError("batch_size and chunk_size must be positive")

    @classmethod
    def from_header(cls, h: ContainerHeader) -> "OsoaConfig":
        return cls(h.coder, h.bits_back, h.precision_bits, h.batch_size, h.chunk_size,
                   h.optimizer, h.schedule, h.seed)


def form_batches(data: Sequence[int], batch_size: int) -> list[np.ndarray]:
    data = np.asarray(data, dtype=np.int64)
    return [data[i:i + batch_size] for i in range(0, len(data), batch_size)]


def chunk_seed(seed: int, chunk_index: int) -> int:
    """Seed of the initial-bits reservoir of one chunk: output ``chunk_index`` of splitmix64(seed)."""
    gen = splitmix64(seed)
    for _ in range(chunk_index):
        next(gen)
    return next(gen)


# -- per-batch coding ------------------------------------------------------------

def ac_encode_batch(enc: AcEncoder, tables, batch: Sequence[int]) -> None:
    prev = None
    for s in batch:
        s = int(s)
        enc.encode_symbol(tables.symbol_table(prev), s)
        prev = s


def ac_decode_batch(dec: AcDecoder, tables, n: int) -> list[int]:
    out, prev = [], None
    for _ in range(n):
        prev = dec.decode_symbol(tables.symbol_table(prev))
        out.append(prev)
    return out


def rans_push_batch(stream: RansStream, tables, batch: Sequence[int]) -> None:
    """Push last symbol first so the batch pops out first-to-last."""
    syms = [int(s) for s in batch]
    qs = [tables.symbol_table(p) for p in [None, *syms[:-1]]]
    for q, s in zip(reversed(qs), reversed(syms)):
        stream.push(q, s)


def rans_pop_batch(stream: RansStream, tables, n: int) -> list[int]:
    out, prev = [], None
    for _ in range(n):
        prev = stream.pop(tables.symbol_table(prev))
        out.append(prev)
    return out


def bits_back_encode(stream: RansStream, tables: VaeCodingTables, x: int) -> None:
    z = stream.pop(tables.posterior[x])
    stream.push(tables.likelihood[z], x)
    stream.push(tables.prior, z)


def bits_back_decode(stream: RansStream, tables: VaeCodingTables) -> int:
    z = stream.pop(tables.prior)
    x = stream.pop(tables.likelihood[z])
    stream.push(tables.posterior[x], z)
    return x


def bits_back_push_batch(stream: RansStream, tables: VaeCodingTables, batch: Sequence[int]) -> None:
    for x in reversed(batch):
        bits_back_encode(stream, tables, int(x))


def bits_back_pop_batch(stream: RansStream, tables: VaeCodingTables, n: int) -> list[int]:
    return [bits_back_decode(stream, tables) for _ in range(n)]


# -- codec module --------------------------------------------------------------

@dataclass
class ChunkResult:
    payload: bytes
    borrowed_words: int = 0


class FifoCodec:
    """Arithmetic-coded stream; batches are encoded as they arrive."""

    def __init__(self, config: OsoaConfig):
        self.config = config
        self.encoder = AcEncoder()
        self.cache: list = []  # unused for FIFO

    def encode_or_cache(self, params: ModelParams, batch, last_batch: bool, tables=None) -> bool:
        if tables is None:
            tables = coding_tables(params, self.config.precision_bits)
        ac_encode_batch(self.encoder, tables, batch)
        return last_batch

    def results(self) -> list[ChunkResult]:
        return [ChunkResult(self.encoder.finish())]

    def close(self) -> None:
        pass


def encode_chunk(entries: Sequence[tuple], precision_bits: int,
                 bits_back: bool, reservoir_seed: int) -> ChunkResult:
    """rANS-code a sealed chunk: entries in reverse, each batch last symbol first.

    Entries are (params, batch) or (params, batch, tables) with tables prebuilt.
    """
    stream = RansStream(reservoir=reservoir_words(reservoir_seed) if bits_back else None)
    for params, batch, *prebuilt in reversed(entries):
        tables = prebuilt[0] if prebuilt else coding_tables(params, precision_bits)
        if bits_back:
            bits_back_push_batch(stream, tables, batch)
        else:
            rans_push_batch(stream, tables, batch)
    return ChunkResult(stream.to_bytes(), len(stream.borrowed))


class FiloCodec:
    """rANS with a cache of (parameter snapshot, batch) flushed in reverse."""

    def __init__(self, config: OsoaConfig, executor: Executor | None = None):
        self.config = config
        self.cache: list[tuple] = []  # (params snapshot, batch, coding tables)
        self.executor = executor
        self._chunks: list[ChunkResult | Future] = []
        self.flushes = 0

    def encode_or_cache(self, params: ModelParams, batch, last_batch: bool, tables=None) -> bool:
        if tables is None:
            tables = coding_tables(params, self.config.precision_bits)
        self.cache.append((params, np.asarray(batch), tables))
        if len(self.cache) > self.config.chunk_size:
            raise OsoaError("FILO cache overflow")
        if len(self.cache) == self.config.chunk_size or last_batch:
            self._flush()
            return True
        return False

    def _flush(self) -> None:
        entries = tuple(self.cache)
        self.cache = []
        seed = chunk_seed(self.config.seed, len(self._chunks))
        args = (entries, self.config.precision_bits, self.config.bits_back, seed)
        if self.executor is None:
            self._chunks.append(encode_chunk(*args))
        else:
            self._chunks.append(self.executor.submit(encode_chunk, *args))
        self.flushes += 1

    def results(self) -> list[ChunkResult]:
        return [c.result() if isinstance(c, Future) else c for c in self._chunks]

    def close(self) -> None:
        if self.executor is not None:
            self.executor.shutdown(wait=True)


def make_codec(config: OsoaConfig):
    if config.coder is Coder.AC:
        return FifoCodec(config)
    executor = ThreadPoolExecutor(max_workers=2) if config.background_flush else None
    return FiloCodec(config, executor)


# -- encode / decode -------------------------------------------------------------

@dataclass
class BatchRecord:
    batch_index: int  # 1-based
    symbols: int
    theoretical_bits: float  # under the quantized coding tables
    model_bits: float = 0.0  # under the unquantized model


@dataclass
class EncodeResult:
    container: OsoaContainer
    records: list[BatchRecord]
    adaptation_calls: int
    borrowed_words: int = 0

    @property
    def theoretical_bits(self) -> float:
        return sum(r.theoretical_bits for r in self.records)

    @property
    def model_bits(self) -> float:
        return sum(r.model_bits for r in self.records)

    @property
    def payload_bits(self) -> int:
        return 8 * sum(len(p) for p in self.container.payloads)

    def bpd_log(self) -> str:
        return format_bpd_log(self.records)


def format_bpd_log(records: Sequence[BatchRecord]) -> str:
    lines, bits, n = [], 0.0, 0
    for r in records:
        bits += r.theoretical_bits
        n += r.symbols
        lines.append(f"{r.batch_index} {r.theoretical_bits / r.symbols:.6f} {bits / n:.6f}")
    return "\n".join(lines) + ("\n" if lines else "")


def _check_model(params: ModelParams, config: OsoaConfig, data: np.ndarray) -> None:
    if config.bits_back and not isinstance(params, ToyVaeParams):
        raise OsoaError("bits-back coding needs a latent-variable (VAE) model")
    if len(data) and (data.min() < 0 or data.max() >= params.alphabet_size):
        raise OsoaError(f"data symbols exceed the model alphabet of {params.alphabet_size}")


def _theoretical(tables, batch, bits_back: bool) -> float:
    if isinstance(tables, VaeCodingTables):
        return tables.theoretical_bits(batch, bits_back=bits_back)
    return tables.theoretical_bits(batch)


def model_bits(params: ModelParams, batch, bits_back: bool) -> float:
    if isinstance(params, ToyVaeParams):
        if bits_back:
            return mean_elbo_bits(params, batch) * len(batch)
        return float(-np.log2(marginal_pmf(params)[np.asarray(batch)]).sum())
    return nll_bits(params, batch) * len(batch)


def osoa_encode(data: Sequence[int], base_params: ModelParams, config: OsoaConfig) -> EncodeResult:
    data = np.asarray(data, dtype=np.int64)
    if len(data) == 0:
        raise OsoaError("nothing to encode")
    _check_model(base_params, config, data)
    batches = form_batches(data, config.batch_size)
    T = len(batches)
    dyn = Dynamics(base_params, config.optimizer, config.schedule)
    codec = make_codec(config)
    records: list[BatchRecord] = []
    entries: list[ChunkEntry] = []
    chunk_start = 0
    try:
        for t, batch in enumerate(batches, start=1):
            tables = coding_tables(dyn.params, config.precision_bits)
            records.append(BatchRecord(t, len(batch), _theoretical(tables, batch, config.bits_back),
                                       model_bits(dyn.params, batch, config.bits_back)))
            sealed = codec.encode_or_cache(dyn.params, batch, t == T, tables)
            if t < T:  # B_T is never used for an update
                dyn.update(batch, t)
            if sealed and config.coder is Coder.RANS:
                entries.append(ChunkEntry(chunk_start, t - 1, param_checksum(dyn.params)))
                chunk_start = t
        if config.coder is Coder.AC:
            entries.append(ChunkEntry(0, T - 1, param_checksum(dyn.params)))
        results = codec.results()
    finally:
        codec.close()
    header = ContainerHeader(config.coder, config.bits_back, config.precision_bits, config.batch_size,
                             config.chunk_size, len(data), config.optimizer, config.schedule,
                             config.seed, param_checksum(base_params))
    raw = write_container(OsoaContainer(header, entries, [r.payload for r in results]))
    return EncodeResult(read_container(raw), records, dyn.calls, sum(r.borrowed_words for r in results))


@dataclass
class DecodeResult:
    data: np.ndarray
    checksums: list[int]
    adaptation_calls: int


def decode_chunk(container: OsoaContainer, index: int, dyn: Dynamics) -> list[np.ndarray]:
    """Decode chunk ``index`` of a FILO container starting from ``dyn`` (mutated)."""
    h = container.header
    entry = container.chunks[index]
    T = h.num_batches
    try:
        stream = RansStream.from_bytes(container.payloads[index])
        out = []
        for t0 in range(entry.first_batch, entry.last_batch + 1):
            tables = coding_tables(dyn.params, h.precision_bits)
            n = h.batch_length(t0)
            if h.bits_back:
                batch = np.array(bits_back_pop_batch(stream, tables, n), dtype=np.int64)
            else:
                batch = np.array(rans_pop_batch(stream, tables, n), dtype=np.int64)
            out.append(batch)
            if t0 + 1 < T:
                dyn.update(batch, t0 + 1)
    except (RansError, IndexError) as e:
        raise ChecksumError(f"chunk {index}: undecodable payload ({e})", index) from None
    _check_stream_end(stream, h, index)
    got = param_checksum(dyn.params)
    if got != entry.param_checksum:
        raise ChecksumError(
            f"chunk {index}: parameter checksum {got:016x} != recorded {entry.param_checksum:016x} "
            "(nondeterministic adaptation or corrupted payload)", index)
    return out


def _check_stream_end(stream: RansStream, h: ContainerHeader, index: int) -> None:
    if stream.x != RANS_L:
        raise ChecksumError(f"chunk {index}: rANS stream did not return to its initial state", index)
    if h.bits_back:
        gen = reservoir_words(chunk_seed(h.seed, index))
        expected = [next(gen) for _ in range(len(stream.words))]
        if stream.words[::-1] != expected:
            raise ChecksumError(f"chunk {index}: recovered initial bits differ from the reservoir", index)
    elif stream.words:
        raise ChecksumError(f"chunk {index}: {len(stream.words)} unread words", index)


def osoa_decode(container: OsoaContainer, base_params: ModelParams) -> DecodeResult:
    h = container.header
    if param_checksum(base_params) != h.base_checksum:
        raise ChecksumError("base model does not match the one used for encoding")
    dyn = Dynamics(base_params, h.optimizer, h.schedule)
    T = h.num_batches
    batches: list[np.ndarray] = []
    checksums: list[int] = []
    if h.coder is Coder.AC:
        dec = AcDecoder(container.payloads[0])
        try:
            for t0 in range(T):
                tables = coding_tables(dyn.params, h.precision_bits)
                batch = np.array(ac_decode_batch(dec, tables, h.batch_length(t0)), dtype=np.int64)
                batches.append(batch)
                if t0 + 1 < T:
                    dyn.update(batch, t0 + 1)
        except (ValueError, IndexError) as e:
            raise ChecksumError(f"chunk 0: undecodable payload ({e})", 0) from None
        got = param_checksum(dyn.params)
        if got != container.chunks[0].param_checksum:
            raise ChecksumError(f"chunk 0: parameter checksum {got:016x} != recorded "
                                f"{container.chunks[0].param_checksum:016x}", 0)
        checksums.append(got)
    else:
        for i in range(len(container.chunks)):
            batches.extend(decode_chunk(container, i, dyn))
            checksums.append(param_checksum(dyn.params))
    data = np.concatenate(batches) if batches else np.zeros(0, dtype=np.int64)
    if len(data) != h.data_length:
        raise ChecksumError("decoded length differs from the header")
    return DecodeResult(data, checksums, dyn.calls)
