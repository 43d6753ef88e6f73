"""Optimizers, gradient clipping, noise annealing, and the training loop.

A training run is sequential and fully determined by (seed, config):
minibatch order comes from the run's RngStream, noise draws from the
same stream, and gradient accumulation order is fixed by the tape. The
evaluation path never touches the RNG.

Annealing follows ``c(t) = max(floor, c0 / sqrt(t+1))`` where t advances
once per ``period`` minibatches. Large early noise lets the optimizer
hop between basins; the floor keeps late training mildly stochastic.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .autodiff import ForwardContext, Parameter, Tape, Tensor
from .networks import predict_classes

# ---------------------------------------------------------------------------
# Optimizers.


class OptimizerKind(str, Enum):
    SGD = "sgd"
    MOMENTUM = "momentum"
    RMSPROP = "rmsprop"


class OptimizerState:
    """Per-parameter state for one optimizer; accumulators mirror shapes.

    RMSProp: a <- rho*a + (1-rho)*g^2, step = lr * g / (sqrt(a) + delta).
    Momentum: v <- momentum*v + g, step = lr * v.
    """

    def __init__(
        self,
        kind,
        params,
        learning_rate: float,
        momentum: float = 0.9,
        rho: float = 0.9,
        delta: float = 1e-6,
    ) -> None:
        self.kind = OptimizerKind(kind)
        self.params: list[Parameter] = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        if learning_rate < 0.0:
            raise ValueError(f"learning rate must be nonnegative, got {learning_rate}")
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.rho = float(rho)
        self.delta = float(delta)
        self.accumulators: dict[str, Tensor] = {}
        if self.kind is not OptimizerKind.SGD:
            self.accumulators = {p.name: np.zeros_like(p.value) for p in self.params}


def optimizer_step(state: OptimizerState, grads: dict[str, Tensor]) -> None:
    """Apply one update in place; raises on any non-finite update."""
    for p in state.params:
        g = grads[p.name]
        if g.shape != p.value.shape:
            raise ValueError(
                f"optimizer_step: gradient shape {list(g.shape)} vs parameter"
                f" {p.name} shape {list(p.value.shape)}"
            )
        if state.kind is OptimizerKind.SGD:
            update = state.learning_rate * g
        elif state.kind is OptimizerKind.MOMENTUM:
            v = state.accumulators[p.name]
            v = state.momentum * v + g
            state.accumulators[p.name] = v
            update = state.learning_rate * v
        else:
            a = state.accumulators[p.name]
            a = state.rho * a + (1.0 - state.rho) * g * g
            state.accumulators[p.name] = a
            update = state.learning_rate * g / (np.sqrt(a) + state.delta)
        if not np.all(np.isfinite(update)):
            raise FloatingPointError(f"non-finite update for parameter {p.name}")
        p.value = p.value - update


def clip_global_norm(grads: dict[str, Tensor], threshold: float) -> dict[str, Tensor]:
    """Rescale so the joint L2 norm is at most the threshold.

    Direction is preserved; gradients below the threshold pass through
    unchanged. Norms within one part in 1e12 of the threshold are left
    alone, which makes clipping exactly idempotent.
    """
    if threshold <= 0.0:
        raise ValueError(f"clip threshold must be positive, got {threshold}")
    total = 0.0
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        total += float((g * g).sum())
    norm = math.sqrt(total)
    if norm <= threshold * (1.0 + 1e-12):
        return dict(grads)
    scale = threshold / norm
    return {name: g * scale for name, g in grads.items()}


# ---------------------------------------------------------------------------
# Annealing schedule.


@dataclass(frozen=True)
class AnnealSchedule:
    """Noise scale decay: c0 / sqrt(t+1), floored, t advancing per period."""

    c0: float = 30.0
    floor: float = 0.5
    period: int = 200

    def __post_init__(self) -> None:
        if self.c0 <= 0.0:
            raise ValueError(f"c0 must be positive, got {self.c0}")
        if self.floor < 0.0:
            raise ValueError(f"floor must be nonnegative, got {self.floor}")
        if self.period < 1:
            raise ValueError(f"period must be at least 1, got {self.period}")


def anneal_value(schedule: AnnealSchedule, minibatch_index: int) -> float:
    """Noise scale after the given number of minibatch updates."""
    if minibatch_index < 0:
        raise ValueError(f"minibatch_index must be nonnegative, got {minibatch_index}")
    t = minibatch_index // schedule.period
    return max(schedule.floor, schedule.c0 / math.sqrt(t + 1.0))


# ---------------------------------------------------------------------------
# Training loop.


@dataclass(frozen=True)
class TrainLoopConfig:
    """Loop shape: epochs, batching, clipping, and evaluation cadence.

    ``clip_threshold = None`` disables clipping. ``curriculum`` is an
    optional ordered tuple of (max sequence length, epochs) phases,
    interpreted by the experiment runner.
    """

    epochs: int
    batch_size: int
    clip_threshold: float | None = 5.0
    seed: int = 0
    eval_every: int = 1
    curriculum: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.clip_threshold is not None and self.clip_threshold <= 0.0:
            raise ValueError(
                f"clip_threshold must be positive when enabled, got {self.clip_threshold}"
            )
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be at least 1, got {self.eval_every}")


@dataclass(frozen=True)
class MetricsRow:
    """One epoch of training: losses, accuracy, noise scale, wall time.

    ``seconds`` is informational only and is excluded from persisted
    metrics files (they must be byte-identical across reruns).
    """

    epoch: int
    minibatches: int
    train_nll: float
    eval_nll: float
    eval_accuracy: float
    noise_scale: float
    seconds: float

    def error_percent(self) -> float:
        return 100.0 * (1.0 - self.eval_accuracy)


class DivergenceError(RuntimeError):
    """Training loss became non-finite; carries the last good metrics row."""

    def __init__(self, message: str, last_good: MetricsRow | None) -> None:
        super().__init__(message)
        self.last_good = last_good


def evaluate_model(model, inputs, labels, noise_scale: float | None = None):
    """Deterministic eval: (mean NLL, accuracy). Never consumes RNG."""
    tape = Tape()
    ctx = ForwardContext(tape, rng=None, training=False, noise_scale=noise_scale)
    logits = model.logits(ctx, inputs)
    labels = np.asarray(labels, dtype=np.int64)
    nll = float(tape.value(tape.softmax_cross_entropy(logits, labels)))
    accuracy = float((predict_classes(tape.value(logits)) == labels).mean())
    return nll, accuracy


class Trainer:
    """Drives epochs of minibatch SGD-style training over one model.

    Owns the minibatch counter that the annealing schedule reads. When no
    schedule is given, activations use their configured noise scale and
    ``report_noise_scale`` is what lands in the metrics.
    """

    def __init__(
        self,
        model,
        optimizer: OptimizerState,
        loop: TrainLoopConfig,
        rng,
        schedule: AnnealSchedule | None = None,
        report_noise_scale: float = 0.0,
    ) -> None:
        self.model = model
        self.optimizer = optimizer
        self.loop = loop
        self.rng = rng
        self.schedule = schedule
        self.report_noise_scale = float(report_noise_scale)
        self.minibatches_done = 0
        self.history: list[MetricsRow] = []

    def current_noise_scale(self) -> float | None:
        """Annealed c for the next minibatch, or None (use configured c)."""
        if self.schedule is None:
            return None
        return anneal_value(self.schedule, self.minibatches_done)

    def _reported_scale(self) -> float:
        scale = self.current_noise_scale()
        return self.report_noise_scale if scale is None else scale

    def train_epoch(
        self, train_inputs, train_labels, eval_inputs, eval_labels, epoch: int
    ) -> MetricsRow:
        """One pass over the training set, then a deterministic eval.

        Raises DivergenceError (carrying the last completed row) if the
        minibatch loss goes non-finite.
        """
        started = time.perf_counter()
        labels = np.asarray(train_labels, dtype=np.int64)
        n = len(labels)
        order = self.rng.permutation(n)
        params = self.optimizer.params
        loss_sum = 0.0
        for lo in range(0, n, self.loop.batch_size):
            batch = order[lo : lo + self.loop.batch_size]
            tape = Tape()
            ctx = ForwardContext(
                tape, rng=self.rng, training=True, noise_scale=self.current_noise_scale()
            )
            logits = self.model.logits(ctx, np.asarray(train_inputs)[batch])
            loss = tape.softmax_cross_entropy(logits, labels[batch])
            loss_value = float(tape.value(loss))
            if not math.isfinite(loss_value):
                last = self.history[-1] if self.history else None
                raise DivergenceError(
                    f"training diverged at epoch {epoch}, minibatch"
                    f" {self.minibatches_done}: loss {loss_value}",
                    last,
                )
            grads = tape.backward(loss)
            grad_map = {p.name: ctx.grad_of(grads, p) for p in params}
            if self.loop.clip_threshold is not None:
                grad_map = clip_global_norm(grad_map, self.loop.clip_threshold)
            optimizer_step(self.optimizer, grad_map)
            loss_sum += loss_value * len(batch)
            self.minibatches_done += 1
        eval_nll, eval_acc = evaluate_model(
            self.model, eval_inputs, eval_labels, noise_scale=self.current_noise_scale()
        )
        row = MetricsRow(
            epoch=epoch,
            minibatches=self.minibatches_done,
            train_nll=loss_sum / n,
            eval_nll=eval_nll,
            eval_accuracy=eval_acc,
            noise_scale=self._reported_scale(),
            seconds=time.perf_counter() - started,
        )
        self.history.append(row)
        return row

    def fit(self, train_inputs, train_labels, eval_inputs, eval_labels) -> list[MetricsRow]:
        for epoch in range(self.loop.epochs):
            self.train_epoch(train_inputs, train_labels, eval_inputs, eval_labels, epoch)
        return self.history
