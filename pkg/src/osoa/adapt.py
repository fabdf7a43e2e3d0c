"""Deterministic model dynamics: optimizers and the per-batch update schedule."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .models import ModelParams, loss_grad


class OptimizerKind(enum.IntEnum):
    SGD = 0
    ADAMAX = 1


@dataclass(frozen=True)
class OptimizerConfig:
    kind: OptimizerKind = OptimizerKind.ADAMAX
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "kind", OptimizerKind(self.kind))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class AdaptationSchedule:
    updates_per_batch: int = 1
    early_stop_step: int | None = None  # last 1-based batch index that still triggers updates

    def __post_init__(self):
        if self.updates_per_batch < 1:
            raise ValueError("updates_per_batch must be >= 1")
        if self.early_stop_step is not None and self.early_stop_step < 0:
            raise ValueError("early_stop_step must be nonnegative")

    def active(self, batch_index: int) -> bool:
        return self.early_stop_step is None or batch_index <= self.early_stop_step


@dataclass(frozen=True, eq=False)
class OptimizerState:
    step_count: int = 0
    first_moment: tuple[np.ndarray, ...] | None = None
    inf_norm: tuple[np.ndarray, ...] | None = None

    @classmethod
    def for_params(cls, params: ModelParams) -> "OptimizerState":
        zeros = tuple(np.zeros_like(t) for t in params.tensors())
        return cls(0, zeros, tuple(z.copy() for z in zeros))


def sgd_step(params: ModelParams, grad: ModelParams, config: OptimizerConfig) -> ModelParams:
    new = tuple(t - config.learning_rate * g for t, g in zip(params.tensors(), grad.tensors()))
    return params.with_tensors(new)


def adamax_step(params: ModelParams, grad: ModelParams, config: OptimizerConfig,
                state: OptimizerState) -> tuple[ModelParams, OptimizerState]:
    if state.first_moment is None:
        state = OptimizerState.for_params(params)
    t = state.step_count + 1
    b1, b2 = config.beta1, config.beta2
    step = config.learning_rate / (1.0 - b1 ** t)
    ms, us, thetas = [], [], []
    for theta, g, m, u in zip(params.tensors(), grad.tensors(), state.first_moment, state.inf_norm):
        m = b1 * m + (1.0 - b1) * g
        u = np.maximum(b2 * u, np.abs(g))
        thetas.append(theta - step * m / (u + config.epsilon))
        ms.append(m)
        us.append(u)
    return params.with_tensors(thetas), OptimizerState(t, tuple(ms), tuple(us))


def optimizer_step(params, grad, config: OptimizerConfig, state: OptimizerState):
    if config.kind is OptimizerKind.SGD:
        return sgd_step(params, grad, config), replace(state, step_count=state.step_count + 1)
    return adamax_step(params, grad, config, state)


def apply_dynamics(params: ModelParams, state: OptimizerState, batch: Sequence[int],
                   config: OptimizerConfig, schedule: AdaptationSchedule,
                   batch_index: int) -> tuple[ModelParams, OptimizerState]:
    """One OSOA update D(params, batch): ``updates_per_batch`` gradient steps
    on this batch, or nothing once past the early-stop step."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    if not schedule.active(batch_index):
        return params, state
    for _ in range(schedule.updates_per_batch):
        params, state = optimizer_step(params, loss_grad(params, batch), config, state)
    return params, state


@dataclass
class Dynamics:
    """Mutable carrier of (params, optimizer state) folded over batches."""

    params: ModelParams
    config: OptimizerConfig
    schedule: AdaptationSchedule
    state: OptimizerState = field(default_factory=OptimizerState)
    calls: int = 0

    def update(self, batch: Sequence[int], batch_index: int) -> None:
        self.params, self.state = apply_dynamics(self.params, self.state, batch, self.config,
                                                 self.schedule, batch_index)
        self.calls += 1


def fit(params: ModelParams, data: Sequence[int], epochs: int, batch_size: int,
        config: OptimizerConfig, seed: int | None = None,
        state: OptimizerState | None = None) -> tuple[ModelParams, OptimizerState]:
    """Full passes over ``data`` in minibatches, one optimizer step per batch.

    With a seed the batch order is reshuffled every epoch by a seeded generator;
    otherwise batches are visited in stream order.
    """
    data = np.asarray(data, dtype=np.int64)
    starts = np.arange(0, len(data), batch_size)
    rng = np.random.default_rng(seed) if seed is not None else None
    state = state if state is not None else OptimizerState()
    for _ in range(epochs):
        order = rng.permutation(len(starts)) if rng is not None else range(len(starts))
        for i in order:
            batch = data[starts[i]:starts[i] + batch_size]
            params, state = optimizer_step(params, loss_grad(params, batch), config, state)
    return params, state
