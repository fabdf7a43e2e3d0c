"""Desk-scale comparison of PreTrain, OSOA, FineTune and ReTrain on a seeded
shifted order-1 Markov source.

Model storage is charged as parameter_count * 64 / total_symbols bpd because
checkpoints hold float64 logits.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .adapt import AdaptationSchedule, OptimizerConfig, OptimizerKind, fit
from .container import Coder
from .models import ContextModelParams, ModelParams, parameter_count
from .pipeline import EncodeResult, OsoaConfig, osoa_encode

BITS_PER_PARAMETER = 64
FLUSH_BITS_PER_STREAM = 64


@dataclass(frozen=True)
class Scenario:
    alphabet_size: int = 16
    pretrain_length: int = 60_000
    target_length: int = 30_000
    concentration: float = 0.3  # Dirichlet alpha of the transition rows
    shift: float = 0.7  # weight of the fresh transition matrix in the target source
    seed: int = 14865
    batch_size: int = 256
    chunk_size: int = 8
    precision_bits: int = 16
    coder: Coder = Coder.RANS
    pretrain_epochs: int = 8
    pretrain_lr: float = 0.05
    osoa_lr: float = 0.02
    updates_per_batch: int = 1
    many_updates: int = 5
    finetune_epochs: tuple[int, ...] = (2, 4)
    retrain_epochs: int = 0  # 0 skips ReTrain
    size_sweep: tuple[int, ...] = (2_000, 8_000, 30_000)


def markov_sources(sc: Scenario) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(sc.seed)
    a = sc.alphabet_size
    source = rng.dirichlet(np.full(a, sc.concentration), size=a)
    fresh = rng.dirichlet(np.full(a, sc.concentration), size=a)
    target = (1.0 - sc.shift) * source + sc.shift * fresh
    return source, target / target.sum(axis=1, keepdims=True)


def sample_markov(trans: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(trans, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(n)
    out = np.empty(n, dtype=np.int64)
    s = 0
    for i in range(n):
        s = int(np.searchsorted(cdf[s], u[i], side="right"))
        out[i] = s
    return out


def markov_entropy_rate(trans: np.ndarray) -> float:
    w, v = np.linalg.eig(trans.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    pi = pi / pi.sum()
    return float(sum(pi[i] * -np.sum(r[r > 0] * np.log2(r[r > 0])) for i, r in enumerate(trans)))


def make_corpora(sc: Scenario) -> tuple[np.ndarray, np.ndarray]:
    source, target = markov_sources(sc)
    rng = np.random.default_rng(sc.seed + 1)
    return sample_markov(source, sc.pretrain_length, rng), sample_markov(target, sc.target_length, rng)


def pretrain_base(sc: Scenario, corpus: np.ndarray) -> ModelParams:
    params = ContextModelParams.zeros(sc.alphabet_size, context_order=1)
    opt = OptimizerConfig(OptimizerKind.ADAMAX, sc.pretrain_lr)
    params, _ = fit(params, corpus, sc.pretrain_epochs, sc.batch_size, opt, seed=sc.seed)
    return params


@dataclass
class VariantRow:
    name: str
    code_bpd: float  # theoretical, under quantized tables
    real_bpd: float
    model_bpd: float
    seconds: float
    streams: int = 1
    quantization_bits: float = 0.0  # quantized minus unquantized model bits

    @property
    def total_bpd(self) -> float:
        return self.code_bpd + self.model_bpd

    def gap_bound_bits(self) -> float:
        return FLUSH_BITS_PER_STREAM * self.streams + max(0.0, self.quantization_bits)


@dataclass
class BenchReport:
    scenario: Scenario
    symbols: int
    rows: list[VariantRow]
    series: dict[str, list[float]] = field(default_factory=dict)
    slope_vs_pretrain: float = 0.0
    size_sweep: list[tuple[int, float, float]] = field(default_factory=list)  # n, osoa, finetune total
    source_entropy_rate: float = 0.0

    def row(self, name: str) -> VariantRow:
        return next(r for r in self.rows if r.name == name)

    def gap_bits(self, name: str) -> float:
        r = self.row(name)
        return (r.real_bpd - r.code_bpd) * self.symbols

    def to_text(self, with_timing: bool = True) -> str:
        lines = [f"target symbols {self.symbols}, alphabet {self.scenario.alphabet_size}, "
                 f"source entropy rate {self.source_entropy_rate:.4f} bpd",
                 f"model storage charged at {BITS_PER_PARAMETER} bits/parameter",
                 f"{'variant':<14}{'code bpd':>10}{'real bpd':>10}{'model bpd':>11}{'total':>9}"
                 f"{'gap bits':>10}{'bound':>9}" + (f"{'time s':>9}" if with_timing else "")]
        for r in self.rows:
            lines.append(f"{r.name:<14}{r.code_bpd:>10.4f}{r.real_bpd:>10.4f}{r.model_bpd:>11.4f}"
                         f"{r.total_bpd:>9.4f}{self.gap_bits(r.name):>10.1f}{r.gap_bound_bits():>9.1f}"
                         + (f"{r.seconds:>9.2f}" if with_timing else ""))
        lines.append(f"slope of per-batch (OSOA - PreTrain) bpd: {self.slope_vs_pretrain:.3e} per batch")
        for n, o, f in self.size_sweep:
            lines.append(f"first {n} symbols: OSOA total {o:.4f} vs FineTune-v1 total {f:.4f}")
        return "\n".join(lines)

    def series_text(self) -> str:
        names = list(self.series)
        lines = ["batch " + " ".join(names)]
        for i in range(len(self.series[names[0]]) if names else 0):
            lines.append(f"{i + 1} " + " ".join(f"{self.series[k][i]:.6f}" for k in names))
        return "\n".join(lines) + "\n"


def _config(sc: Scenario, schedule: AdaptationSchedule) -> OsoaConfig:
    return OsoaConfig(sc.coder, False, sc.precision_bits, sc.batch_size, sc.chunk_size,
                      OptimizerConfig(OptimizerKind.ADAMAX, sc.osoa_lr), schedule, sc.seed)


def _row(name: str, res: EncodeResult, n: int, seconds: float, model_bpd: float = 0.0) -> VariantRow:
    return VariantRow(name, res.theoretical_bits / n, res.payload_bits / n, model_bpd, seconds,
                      len(res.container.payloads), res.theoretical_bits - res.model_bits)


def _per_batch(res: EncodeResult) -> np.ndarray:
    return np.array([r.theoretical_bits / r.symbols for r in res.records])


def run_bench(sc: Scenario = Scenario()) -> BenchReport:
    pre_corpus, target = make_corpora(sc)
    base = pretrain_base(sc, pre_corpus)
    n = len(target)
    static = AdaptationSchedule(1, early_stop_step=0)
    rows: list[VariantRow] = []
    results: dict[str, EncodeResult] = {}

    def timed(name, fn, model_bpd=0.0):
        t0 = time.perf_counter()
        res = fn()
        rows.append(_row(name, res, n, time.perf_counter() - t0, model_bpd))
        results[name] = res

    timed("PreTrain", lambda: osoa_encode(target, base, _config(sc, static)))
    timed("OSOA", lambda: osoa_encode(target, base, _config(sc, AdaptationSchedule(sc.updates_per_batch))))
    timed(f"OSOA x{sc.many_updates}",
          lambda: osoa_encode(target, base, _config(sc, AdaptationSchedule(sc.many_updates))))
    model_bpd = parameter_count(base) * BITS_PER_PARAMETER / n
    opt = OptimizerConfig(OptimizerKind.ADAMAX, sc.osoa_lr)
    for v, epochs in enumerate(sc.finetune_epochs, start=1):
        def finetune(epochs=epochs):
            p, _ = fit(base, target, epochs, sc.batch_size, opt)
            return osoa_encode(target, p, _config(sc, static))
        timed(f"FineTune-v{v}", finetune, model_bpd)
    if sc.retrain_epochs:
        def retrain():
            p, _ = fit(ContextModelParams.zeros(sc.alphabet_size, 1), target, sc.retrain_epochs,
                       sc.batch_size, OptimizerConfig(OptimizerKind.ADAMAX, sc.pretrain_lr))
            return osoa_encode(target, p, _config(sc, static))
        timed("ReTrain", retrain, model_bpd)

    osoa_b = _per_batch(results["OSOA"])
    series = {"osoa_minus_pretrain": (osoa_b - _per_batch(results["PreTrain"])).tolist(),
              "osoa_minus_finetune_v1": (osoa_b - _per_batch(results["FineTune-v1"])).tolist()}
    idx = np.arange(1, len(osoa_b) + 1)
    slope = float(np.polyfit(idx, series["osoa_minus_pretrain"], 1)[0])

    sweep = []
    for size in sc.size_sweep:
        size = min(size, n)
        sub = target[:size]
        o = osoa_encode(sub, base, _config(sc, AdaptationSchedule(sc.updates_per_batch)))
        p, _ = fit(base, sub, sc.finetune_epochs[0], sc.batch_size, opt)
        f = osoa_encode(sub, p, _config(sc, static))
        sweep.append((size, o.theoretical_bits / size,
                      f.theoretical_bits / size + parameter_count(p) * BITS_PER_PARAMETER / size))

    _, target_trans = markov_sources(sc)
    return BenchReport(sc, n, rows, series, slope, sweep, markov_entropy_rate(target_trans))

