"""Toy discrete models: an order-0/1 context model and a single-latent VAE.

Both keep their parameters as float64 logit tables. Likelihoods, ELBO and
their gradients are exact; nothing is sampled, so every evaluation is
deterministic.
"""
from __future__ import annotations

import hashlib
import math
import struct
import zlib
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .prob import Pmf, QuantizedPmf, quantize_rows

LN2 = math.log(2.0)
CHECKPOINT_MAGIC = b"OSM1"
KIND_ORDER0, KIND_ORDER1, KIND_VAE = 0, 1, 2


class CheckpointError(ValueError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass(frozen=True, eq=False)
class ContextModelParams:
    logits: np.ndarray  # [num_contexts, alphabet_size]
    context_order: int = 0

    def __post_init__(self):
        if self.context_order not in (0, 1):
            raise ValueError("context_order must be 0 or 1")
        logits = np.array(self.logits, dtype=np.float64)
        if logits.ndim != 2:
            raise ValueError("logits must be a 2-D table")
        expected = 1 if self.context_order == 0 else logits.shape[1]
        if logits.shape[0] != expected:
            raise ValueError(f"order-{self.context_order} model needs {expected} context rows")
        if not np.all(np.isfinite(logits)):
            raise ValueError("non-finite logits")
        object.__setattr__(self, "logits", logits)

    @classmethod
    def zeros(cls, alphabet_size: int, context_order: int = 0) -> "ContextModelParams":
        rows = 1 if context_order == 0 else alphabet_size
        return cls(np.zeros((rows, alphabet_size)), context_order)

    @property
    def alphabet_size(self) -> int:
        return self.logits.shape[1]

    def tensors(self) -> tuple[np.ndarray, ...]:
        return (self.logits,)

    def with_tensors(self, tensors: Sequence[np.ndarray]) -> "ContextModelParams":
        (logits,) = tensors
        return ContextModelParams(logits, self.context_order)


@dataclass(frozen=True, eq=False)
class ToyVaeParams:
    prior_logits: np.ndarray  # [Z]
    likelihood_logits: np.ndarray  # [Z, A]   p(x|z)
    posterior_logits: np.ndarray  # [A, Z]   q(z|x)

    def __post_init__(self):
        prior = np.array(self.prior_logits, dtype=np.float64)
        lik = np.array(self.likelihood_logits, dtype=np.float64)
        post = np.array(self.posterior_logits, dtype=np.float64)
        z = prior.shape[0]
        if prior.ndim != 1 or lik.ndim != 2 or post.ndim != 2:
            raise ValueError("bad VAE table ranks")
        if lik.shape[0] != z or post.shape != (lik.shape[1], z):
            raise ValueError("inconsistent VAE table shapes")
        for t in (prior, lik, post):
            if not np.all(np.isfinite(t)):
                raise ValueError("non-finite logits")
        object.__setattr__(self, "prior_logits", prior)
        object.__setattr__(self, "likelihood_logits", lik)
        object.__setattr__(self, "posterior_logits", post)

    @classmethod
    def zeros(cls, alphabet_size: int, latent_size: int) -> "ToyVaeParams":
        return cls(np.zeros(latent_size), np.zeros((latent_size, alphabet_size)),
                   np.zeros((alphabet_size, latent_size)))

    @property
    def alphabet_size(self) -> int:
        return self.likelihood_logits.shape[1]

    @property
    def latent_size(self) -> int:
        return self.prior_logits.shape[0]

    def tensors(self) -> tuple[np.ndarray, ...]:
        return (self.prior_logits, self.likelihood_logits, self.posterior_logits)

    def with_tensors(self, tensors: Sequence[np.ndarray]) -> "ToyVaeParams":
        return ToyVaeParams(*tensors)


ModelParams = ContextModelParams | ToyVaeParams


def parameter_count(params: ModelParams) -> int:
    return sum(t.size for t in params.tensors())


def param_checksum(params: ModelParams) -> int:
    """64-bit digest of the raw float64 parameter bytes."""
    h = hashlib.blake2b(digest_size=8)
    for t in params.tensors():
        h.update(np.ascontiguousarray(t, dtype="<f8").tobytes())
    return int.from_bytes(h.digest(), "little")


# -- context model -----------------------------------------------------------

def contexts_for(params: ContextModelParams, batch: Sequence[int]) -> np.ndarray:
    """Context row per position. Order-1 batches start in context 0."""
    batch = np.asarray(batch, dtype=np.int64)
    if params.context_order == 0:
        return np.zeros(len(batch), dtype=np.int64)
    ctx = np.empty(len(batch), dtype=np.int64)
    if len(batch):
        ctx[0] = 0
        ctx[1:] = batch[:-1]
    return ctx


def pmf_for_context(params: ContextModelParams, ctx: int | None = None) -> Pmf:
    if (ctx is None) != (params.context_order == 0):
        raise ValueError("context must be given exactly when context_order is 1")
    row = params.logits[0 if ctx is None else ctx]
    return Pmf(tuple(softmax(row).tolist()))


def _check_batch(batch, alphabet_size: int) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.int64)
    if batch.ndim != 1 or len(batch) == 0:
        raise ValueError("batch must be a nonempty symbol sequence")
    if batch.min() < 0 or batch.max() >= alphabet_size:
        raise ValueError("symbol outside the model alphabet")
    return batch


def nll_bits(params: ContextModelParams, batch: Sequence[int]) -> float:
    batch = _check_batch(batch, params.alphabet_size)
    ctx = contexts_for(params, batch)
    logp = log_softmax(params.logits)
    return float(-logp[ctx, batch].sum() / len(batch) / LN2)


def _transition_counts(params: ContextModelParams, batch: np.ndarray) -> np.ndarray:
    counts = np.zeros(params.logits.shape, dtype=np.int64)
    np.add.at(counts, (contexts_for(params, batch), batch), 1)
    return counts


def grad_nll(params: ContextModelParams, batch: Sequence[int]) -> ContextModelParams:
    batch = _check_batch(batch, params.alphabet_size)
    counts = _transition_counts(params, batch)
    visits = counts.sum(axis=1, keepdims=True)
    g = (visits * softmax(params.logits) - counts) / (len(batch) * LN2)
    return ContextModelParams(g, params.context_order)


# -- toy VAE -----------------------------------------------------------------

def _vae_logs(params: ToyVaeParams):
    return (log_softmax(params.prior_logits), log_softmax(params.likelihood_logits),
            log_softmax(params.posterior_logits))


def exact_marginal(params: ToyVaeParams, x: int) -> float:
    prior = softmax(params.prior_logits)
    lik = softmax(params.likelihood_logits)
    return float(prior @ lik[:, x])


def marginal_pmf(params: ToyVaeParams) -> np.ndarray:
    p = softmax(params.prior_logits) @ softmax(params.likelihood_logits)
    return p / p.sum()


def _elbo_terms(params: ToyVaeParams) -> tuple[np.ndarray, np.ndarray]:
    """q(z|x) as [A, Z] and f[x, z] = log q(z|x) - log p(x|z) - log p(z) in nats."""
    lp, llik, lq = _vae_logs(params)
    f = lq - llik.T - lp[None, :]
    return np.exp(lq), f


def elbo_bits(params: ToyVaeParams, x: int) -> float:
    """Negative ELBO of one symbol, in bits (an upper bound on -log2 p(x))."""
    q, f = _elbo_terms(params)
    return float(q[x] @ f[x] / LN2)


def mean_elbo_bits(params: ToyVaeParams, batch: Sequence[int]) -> float:
    batch = _check_batch(batch, params.alphabet_size)
    q, f = _elbo_terms(params)
    per_x = (q * f).sum(axis=1) / LN2
    return float(per_x[batch].sum() / len(batch))


def grad_elbo(params: ToyVaeParams, batch: Sequence[int]) -> ToyVaeParams:
    """Exact gradient of :func:`mean_elbo_bits` w.r.t. all three logit tables."""
    batch = _check_batch(batch, params.alphabet_size)
    w = np.bincount(batch, minlength=params.alphabet_size).astype(np.float64) / len(batch)
    prior = softmax(params.prior_logits)
    lik = softmax(params.likelihood_logits)
    q, f = _elbo_terms(params)

    # d/dphi_x[k] of E_q f = q_k (f_k - E_q f)
    g_post = w[:, None] * q * (f - (q * f).sum(axis=1, keepdims=True))
    # -E_q log p(z): softmax gradient (p - q), averaged over x
    qbar = w @ q
    g_prior = prior - qbar
    # -E_q log p(x|z): row z gets q(z|x) (p(.|z) - onehot(x))
    wq = w[:, None] * q  # [A, Z]
    g_lik = wq.sum(axis=0)[:, None] * lik - wq.T
    return ToyVaeParams(g_prior / LN2, g_lik / LN2, g_post / LN2)


# -- objective dispatch --------------------------------------------------------

def loss_bits(params: ModelParams, batch: Sequence[int]) -> float:
    if isinstance(params, ToyVaeParams):
        return mean_elbo_bits(params, batch)
    return nll_bits(params, batch)


def loss_grad(params: ModelParams, batch: Sequence[int]) -> ModelParams:
    if isinstance(params, ToyVaeParams):
        return grad_elbo(params, batch)
    return grad_nll(params, batch)


# -- coding tables -------------------------------------------------------------

class _LazyTables:
    """Quantized count rows, materialized as QuantizedPmf on first use."""

    def __init__(self, counts: np.ndarray, precision_bits: int):
        self.counts = counts
        self.precision_bits = precision_bits
        self._starts = np.cumsum(counts, axis=1) - counts
        self._cache: dict[int, QuantizedPmf] = {}

    def __len__(self) -> int:
        return self.counts.shape[0]

    def __getitem__(self, i: int) -> QuantizedPmf:
        q = self._cache.get(i)
        if q is None:
            if not 0 <= i < len(self):
                raise IndexError(i)
            q = QuantizedPmf._unchecked(tuple(self.counts[i].tolist()), self.precision_bits,
                                        tuple(self._starts[i].tolist()))
            self._cache[i] = q
        return q

    def __iter__(self):
        return (self[i] for i in range(len(self)))


class ContextCodingTables:
    def __init__(self, params: ContextModelParams, precision_bits: int):
        self.context_order = params.context_order
        self.precision_bits = precision_bits
        self.rows = _LazyTables(quantize_rows(softmax(params.logits), precision_bits), precision_bits)

    def symbol_table(self, prev: int | None) -> QuantizedPmf:
        """Table for the next symbol; ``prev`` is None at the start of a batch."""
        if self.context_order == 0 or prev is None:
            return self.rows[0]
        return self.rows[prev]

    def all_tables(self) -> list[QuantizedPmf]:
        return list(self.rows)

    def theoretical_bits(self, batch: Sequence[int]) -> float:
        ctx = self._contexts(batch)
        c = self.rows.counts[ctx, np.asarray(batch)]
        return float(-np.log2(c / float(1 << self.precision_bits)).sum())

    def _contexts(self, batch) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.int64)
        if self.context_order == 0:
            return np.zeros(len(batch), dtype=np.int64)
        return np.concatenate([[0], batch[:-1]]).astype(np.int64)

    def serialize(self) -> bytes:
        return b"".join(q.to_bytes() for q in self.rows)


class VaeCodingTables:
    """p(z), p(x|z) for each z, q(z|x) for each x, and the marginal p(x)."""

    def __init__(self, params: ToyVaeParams, precision_bits: int):
        self.precision_bits = precision_bits
        self.latent_size = params.latent_size
        self.prior = _LazyTables(quantize_rows(softmax(params.prior_logits)[None, :], precision_bits),
                                 precision_bits)[0]
        self.likelihood = _LazyTables(quantize_rows(softmax(params.likelihood_logits), precision_bits),
                                      precision_bits)
        self.posterior = _LazyTables(quantize_rows(softmax(params.posterior_logits), precision_bits),
                                     precision_bits)
        self.marginal = _LazyTables(quantize_rows(marginal_pmf(params)[None, :], precision_bits),
                                    precision_bits)[0]

    def symbol_table(self, prev: int | None) -> QuantizedPmf:
        return self.marginal

    def all_tables(self) -> list[QuantizedPmf]:
        return [self.prior, *self.likelihood, *self.posterior]

    @cached_property
    def _elbo_per_symbol(self) -> np.ndarray:
        scale = float(1 << self.precision_bits)
        lp = np.log2(np.array(self.prior.counts) / scale)
        llik = np.log2(self.likelihood.counts / scale)
        q = self.posterior.counts / scale
        lq = np.log2(q)
        return (q * (lq - llik.T - lp[None, :])).sum(axis=1)

    def theoretical_bits(self, batch: Sequence[int], bits_back: bool = False) -> float:
        batch = np.asarray(batch, dtype=np.int64)
        if bits_back:
            return float(self._elbo_per_symbol[batch].sum())
        c = np.array(self.marginal.counts)[batch]
        return float(-np.log2(c / float(1 << self.precision_bits)).sum())

    def serialize(self) -> bytes:
        return b"".join(q.to_bytes() for q in self.all_tables())


def coding_tables(params: ModelParams, precision_bits: int):
    if isinstance(params, ToyVaeParams):
        return VaeCodingTables(params, precision_bits)
    return ContextCodingTables(params, precision_bits)


# -- checkpoints ----------------------------------------------------------------
# "OSM1" | kind u8 | alphabet u32 | latent u32 | f64 tensors row-major | crc32 u32

def checkpoint_bytes(params: ModelParams) -> bytes:
    if isinstance(params, ToyVaeParams):
        head = struct.pack("<4sBII", CHECKPOINT_MAGIC, KIND_VAE, params.alphabet_size, params.latent_size)
    else:
        kind = KIND_ORDER0 if params.context_order == 0 else KIND_ORDER1
        head = struct.pack("<4sBII", CHECKPOINT_MAGIC, kind, params.alphabet_size, 0)
    body = b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes() for t in params.tensors())
    payload = head + body
    return payload + struct.pack("<I", zlib.crc32(payload))


def params_from_checkpoint(raw: bytes) -> ModelParams:
    if len(raw) < 17 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    payload, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) != crc:
        raise CheckpointChecksumError("checkpoint checksum mismatch")
    _, kind, a, z = struct.unpack("<4sBII", payload[:13])
    body = np.frombuffer(payload[13:], dtype="<f8").astype(np.float64)
    if kind == KIND_VAE:
        shapes = [(z,), (z, a), (a, z)]
    elif kind in (KIND_ORDER0, KIND_ORDER1):
        shapes = [(1 if kind == KIND_ORDER0 else a, a)]
    else:
        raise CheckpointError(f"unknown model kind {kind}")
    if body.size != sum(int(np.prod(s)) for s in shapes):
        raise CheckpointError("checkpoint size does not match its dimensions")
    tensors, off = [], 0
    for s in shapes:
        n = int(np.prod(s))
        tensors.append(body[off:off + n].reshape(s))
        off += n
    if kind == KIND_VAE:
        return ToyVaeParams(*tensors)
    return ContextModelParams(tensors[0], 0 if kind == KIND_ORDER0 else 1)


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


def load_checkpoint(path: str | Path) -> ModelParams:
    return params_from_checkpoint(Path(path).read_bytes())
