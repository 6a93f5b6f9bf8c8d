"""Deterministic mini-batch training.

The batch order is a pure function of ``(seed, epoch, n, batch_size)``: each
epoch shuffles with its own ``"shuffle:<epoch>"`` stream, then walks full
batches followed by one partial batch.  Any contiguous range of global
steps can therefore be replayed from a checkpoint without re-running the
steps before it.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .. import rng
from ..errors import NonFiniteLoss, ShapeError
from .model import ModelWeights, evaluate, loss_and_grads
from .optim import Optimizer, OptState

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    learning_rate: float = 1e-4
    batch_size: int = 128
    optimizer: Optimizer = field(default_factory=Optimizer)
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate >= 0:
            raise ValueError("need epochs >= 0, batch_size >= 1, learning_rate >= 0")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["optimizer"] = Optimizer(**d.get("optimizer", {}))
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    accuracy: float | None
    weights: ModelWeights


@dataclass
class Checkpoint:
    step: int
    weights: ModelWeights
    opt_state: OptState


@dataclass
class EpochTrace:
    records: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def weights(self) -> list:
        return [r.weights for r in self.records]

    @property
    def accuracies(self) -> list:
        return [r.accuracy for r in self.records]


def steps_per_epoch(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


@lru_cache(maxsize=64)
def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    order = rng.permutation(rng.derive_stream(seed, f"shuffle:{epoch}"), n)
    order.flags.writeable = False
    return order


def batch_at(seed: int, step: int, n: int, batch_size: int) -> np.ndarray:
    """Row indices used at global ``step`` (0-based); epochs count from 1."""
    epoch, b = divmod(step, steps_per_epoch(n, batch_size))
    return epoch_order(seed, epoch + 1, n)[b * batch_size:(b + 1) * batch_size]


def _check_data(weights: ModelWeights, dataset) -> None:
    arch = weights.arch
    if dataset.dim != int(np.prod(arch.input_shape)):
        raise ShapeError(f"dataset has {dataset.dim} features, architecture wants {arch.input_shape}")
    if dataset.num_classes != arch.num_classes:
        raise ShapeError(f"dataset has {dataset.num_classes} classes, head has {arch.num_classes}")


def _step(weights, params, state, dataset, config, step, schedule):
    idx = schedule(step)
    loss, grads = loss_and_grads(weights, dataset.features[idx], dataset.labels[idx], params)
    if not np.isfinite(loss):
        raise NonFiniteLoss(step)
    config.optimizer.step(params, grads, state, config.learning_rate)
    return loss, len(idx)


def replay(start: ModelWeights, opt_state: OptState, dataset, config: TrainConfig,
           first_step: int, last_step: int, schedule=None) -> tuple[ModelWeights, OptState]:
    """Re-run global steps ``[first_step, last_step)`` from a snapshot."""
    _check_data(start, dataset)
    if schedule is None:
        schedule = lambda s: batch_at(config.seed, s, len(dataset), config.batch_size)  # noqa: E731
    params = start.mutable()
    state = opt_state.copy()
    for step in range(first_step, last_step):
        _step(start, params, state, dataset, config, step, schedule)
    return ModelWeights(start.arch, params), state


def train(init: ModelWeights, train_set, config: TrainConfig, eval_set=None,
          schedule=None) -> tuple[ModelWeights, EpochTrace]:
    """Train from ``init``; returns the final weights and the per-epoch trace.

    ``schedule`` maps a global step to row indices; the default derives it
    from ``config.seed``.  With ``config.checkpoint_every = k > 0`` the trace
    also holds snapshots (weights and optimizer state) at step 0, every k
    steps, and the last step.
    """
    _check_data(init, train_set)
    n = len(train_set)
    if n == 0:
        raise ShapeError("empty training set")
    if schedule is None:
        schedule = lambda s: batch_at(config.seed, s, n, config.batch_size)  # noqa: E731
    per = steps_per_epoch(n, config.batch_size)
    k = config.checkpoint_every
    params = init.mutable()
    state = config.optimizer.init_state(params)
    trace = EpochTrace()
    if k:
        trace.checkpoints.append(Checkpoint(0, init, state.copy()))
    step = 0
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for _ in range(per):
            try:
                loss, size = _step(init, params, state, train_set, config, step, schedule)
            except NonFiniteLoss as exc:
                exc.trace = trace
                raise
            total += loss * size
            step += 1
            if k and step % k == 0:
                trace.checkpoints.append(Checkpoint(step, ModelWeights(init.arch, params), state.copy()))
        snapshot = ModelWeights(init.arch, params)
        acc = evaluate(snapshot, eval_set) if eval_set is not None else None
        trace.records.append(EpochRecord(epoch, total / n, acc, snapshot))
        log.info("epoch %d loss %.6f acc %s", epoch, total / n, acc)
    if k and trace.checkpoints[-1].step != step:
        trace.checkpoints.append(Checkpoint(step, ModelWeights(init.arch, params), state.copy()))
    final = ModelWeights(init.arch, params) if config.epochs else init
    return final, trace
