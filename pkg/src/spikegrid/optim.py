"""SGD with momentum and a milestone learning-rate schedule."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

LEARNING_RATE = 0.0268
MILESTONES = (0.7, 0.8, 0.9)


class SGD:
    """Heavy-ball SGD: ``v = momentum * v + g (+ wd * p)``; ``p -= lr * v``.

    Parameters are addressed by name so momentum buffers can be saved and
    restored alongside the network.
    """

    def __init__(self, params: dict, lr: float = LEARNING_RATE, momentum: float = 0.9,
                 weight_decay: float = 0.0, clip_norm: Optional[float] = None):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.params = dict(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.buffers: dict[str, np.ndarray] = {}

    def step(self, grads) -> float:
        """Apply one update; returns the global gradient norm before clipping."""
        gs = {name: grads[p] for name, p in self.params.items()}
        norm = float(np.sqrt(np.sum([np.sum(g * g) for g in gs.values()])))
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        for name, p in self.params.items():
            g = gs[name] * scale
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v = self.buffers.get(name)
            v = g if v is None else self.momentum * v + g
            self.buffers[name] = v
            p.data = p.data - self.lr * v
        return norm

    def state(self) -> dict:
        return {"lr": self.lr, "momentum": self.momentum, "weight_decay": self.weight_decay,
                "clip_norm": self.clip_norm}


class MultiStepSchedule:
    """Divide the base rate by ``factor`` at each milestone fraction of training."""

    def __init__(self, base_lr: float, epochs: int, milestones: Sequence[float] = MILESTONES, factor: float = 10.0):
        if list(milestones) != sorted(milestones) or any(not 0 < m < 1 for m in milestones):
            raise ValueError("milestones must be sorted fractions in (0, 1)")
        self.base_lr = base_lr
        self.epochs = epochs
        self.milestones = tuple(milestones)
        self.factor = factor

    def boundaries(self) -> list[int]:
        """Epoch counts after which the rate drops."""
        return [int(round(m * self.epochs)) for m in self.milestones]

    def lr_at(self, epoch: int) -> float:
        """Rate used during 0-based ``epoch``."""
        drops = sum(epoch >= b for b in self.boundaries())
        return self.base_lr / self.factor ** drops
