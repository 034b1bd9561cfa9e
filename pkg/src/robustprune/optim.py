"""Momentum SGD with decoupled weight decay and a cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class CosineSchedule:
    """rate(e) = base * 0.5 * (1 + cos(pi * e / total)), e in [0, total]."""

    base: float
    total_epochs: int

    def rate(self, epoch: int) -> float:
        if self.total_epochs <= 0:
            return self.base
        frac = min(max(epoch, 0), self.total_epochs) / self.total_epochs
        return self.base * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass
class SgdState:
    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    schedule: CosineSchedule | None = None
    velocity: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise ValueError(f"weight decay must be >= 0, got {self.weight_decay}")

    def set_epoch(self, epoch: int) -> float:
        """Sync the learning rate to the cosine schedule; returns the rate."""
        if self.schedule is not None:
            self.learning_rate = self.schedule.rate(epoch)
        return self.learning_rate


def sgd_step(state: SgdState, params: list[Tensor]) -> None:
    """One momentum-SGD step with decoupled weight decay; clears grads.

    Decay is applied to the pre-update parameter values, independent of the
    gradient path, then the momentum update follows.
    """
    if not state.velocity:
        state.velocity = [np.zeros_like(p.values) for p in params]
    if len(state.velocity) != len(params):
        raise ValueError("optimizer state does not match the parameter list")
    lr = state.learning_rate
    for p, v in zip(params, state.velocity):
        if p.grad is None:
            raise ValueError("sgd_step: parameter has no gradient")
        if state.weight_decay:
            p.values -= lr * state.weight_decay * p.values
        v *= state.momentum
        v += p.grad
        p.values -= lr * v
        p.grad = None
