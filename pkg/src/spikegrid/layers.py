"""Composite spiking layers: BNTT normalization, conv blocks, output heads."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as tn
from .errors import ContractError, ShapeError
from .neuron import LifParams, LifState, lif_step
from .tensor import Tensor

BN_MODES = ("bntt", "time_averaged", "none")


class Bntt:
    """Batch normalization with separate statistics per timestep.

    In ``"bntt"`` mode each timestep ``t`` (0-based) owns its own scale,
    optional shift and running statistics. ``"time_averaged"`` shares one
    set across all timesteps; ``"none"`` is the identity.
    """

    def __init__(self, channels: int, num_steps: int, mode: str = "bntt", shift: bool = False,
                 momentum: float = 0.1, eps: float = 1e-5, name: str = "bntt"):
        if mode not in BN_MODES:
            raise ValueError(f"unknown normalization mode {mode!r}")
        self.channels = channels
        self.num_steps = num_steps
        self.mode = mode
        self.momentum = momentum
        self.eps = eps
        self.name = name
        slots = num_steps if mode == "bntt" else (1 if mode == "time_averaged" else 0)
        dt = tn.get_default_dtype()
        self.gamma = [tn.parameter(np.ones(channels), f"{name}.gamma.{i}") for i in range(slots)]
        self.beta = [tn.parameter(np.zeros(channels), f"{name}.beta.{i}") for i in range(slots)] if shift else []
        self.running_mean = np.zeros((slots, channels), dtype=dt)
        self.running_var = np.ones((slots, channels), dtype=dt)

    def _slot(self, t: int) -> int:
        if self.mode == "bntt":
            if not 0 <= t < self.num_steps:
                raise ContractError(
                    f"{self.name}: timestep {t} has no statistics (trained for {self.num_steps} steps); "
                    "early-stopped inference may only use the first T_train steps")
            return t
        return 0

    def parameters(self) -> list[Tensor]:
        return self.gamma + self.beta

    def buffers(self) -> dict[str, np.ndarray]:
        if self.mode == "none":
            return {}
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}

    def __call__(self, x: Tensor, t: int, training: bool) -> Tensor:
        return bntt_forward(self, x, t, training)


def bntt_forward(bn: Bntt, x: Tensor, t: int, training: bool) -> Tensor:
    """Normalize ``x`` channel-wise with the parameters of timestep ``t``."""
    if bn.mode == "none":
        return x
    if x.ndim < 2 or x.shape[1] != bn.channels:
        raise ShapeError(f"{bn.name}: expected {bn.channels} channels, got shape {x.shape}")
    s = bn._slot(t)
    beta = bn.beta[s] if bn.beta else None
    if not training:
        return tn.batch_norm(x, bn.gamma[s], beta, bn.running_mean[s], bn.running_var[s], bn.eps)
    if x.shape[0] < 2:
        raise ContractError(f"{bn.name}: training-mode normalization needs a batch of at least 2")
    out, mu, var = tn.batch_norm_train(x, bn.gamma[s], beta, bn.eps)
    m = x.size // x.shape[1]
    unbiased = var * (m / (m - 1)) if m > 1 else var
    bn.running_mean[s] = (1 - bn.momentum) * bn.running_mean[s] + bn.momentum * mu
    bn.running_var[s] = (1 - bn.momentum) * bn.running_var[s] + bn.momentum * unbiased
    return out


def spiking_conv_block(x: Tensor, state: LifState, weight: Tensor, bn: Optional[Bntt], t: int,
                       params: LifParams, *, stride: int = 1, padding: int = 1, residual: Optional[Tensor] = None,
                       training: bool = False, leak=None):
    """conv -> BNTT -> (+ residual voltage) -> LIF.

    Returns ``(spikes, new_state, current)`` where ``current`` is the
    normalized conv output before any residual is added.
    """
    current = tn.conv2d(x, weight, stride, padding)
    if bn is not None:
        current = bn(current, t, training)
    drive = current if residual is None else current + residual
    spikes, state = lif_step(state, drive, params, leak)
    return spikes, state, current


def boosting_forward(potentials: Tensor, group: int = 10) -> Tensor:
    """Average each consecutive group of ``group`` outputs into one score."""
    if potentials.ndim != 2 or potentials.shape[1] % group:
        raise ShapeError(f"boosting: width {potentials.shape} not divisible by {group}")
    n, width = potentials.shape
    pooled = tn.pool2d(potentials.reshape(n, 1, 1, width), "avg", (1, group), (1, group))
    return pooled.reshape(n, width // group)


class OutputAccumulator:
    """Non-leaking, non-spiking readout neurons."""

    def __init__(self):
        self.u: Optional[Tensor] = None
        self.steps = 0

    def step(self, current: Tensor) -> "OutputAccumulator":
        self.u = current if self.u is None else self.u + current
        self.steps += 1
        return self

    def readout(self) -> Tensor:
        if self.u is None:
            raise ContractError("readout before any timestep")
        return self.u / float(self.steps)


def output_step(acc: OutputAccumulator, current: Tensor) -> OutputAccumulator:
    return acc.step(current)


def readout(acc: OutputAccumulator) -> Tensor:
    return acc.readout()
