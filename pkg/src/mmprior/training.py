"""Minibatch Adam loop shared by the flow and VAE trainers."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import gradkit as gk


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    max_seconds: float | None = None


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    steps: int = 0
    seconds: float = 0.0


def run_training(params: gk.ParamSet, loss_fn, n_rows: int, config: TrainConfig,
                 rng: np.random.Generator) -> TrainResult:
    """Shared minibatch Adam loop; ``loss_fn(idx, step)`` builds a scalar graph."""
    state = gk.AdamState(config.lr, config.beta1, config.beta2)
    result = TrainResult()
    t0 = time.process_time()
    for _ in range(config.epochs):
        order = rng.permutation(n_rows)
        total, count = 0.0, 0
        for lo in range(0, n_rows, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            try:
                loss = loss_fn(idx, result.steps)
                grads = gk.backward(loss, params)
                gk.adam_step(params, grads, state)
            except gk.NumericFailure as e:
                raise gk.NumericFailure(e.where, step=result.steps) from e
            result.steps += 1
            total += loss.item() * idx.size
            count += idx.size
        result.losses.append(total / count)
        if config.max_seconds is not None and time.process_time() - t0 > config.max_seconds:
            break
    result.seconds = time.process_time() - t0
    return result
