"""Leaky integrate-and-fire dynamics and the spike nonlinearity.

One timestep is integrate, threshold, then subtract-reset::

    u' = I + leak * u_prev
    o  = 1[u' >= threshold]
    u  = u' - threshold * o

On the tape the spike's derivative is replaced by a triangle of height
``alpha`` and half-width 1 centred on the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import tensor as tn
from .errors import ShapeError
from .tensor import Tensor

LEAK = 0.874
THRESHOLD = 1.0
ALPHA = 0.3


@dataclass
class LifParams:
    """Neuron constants.

    ``surrogate`` selects where the triangle is centred: ``"centered"`` at
    the threshold, or ``"literal"`` at zero membrane potential.
    ``spike_mode="soft"`` swaps the step for its smooth antiderivative
    (used for finite-difference checks); in that mode the reset always
    stays on the tape so forward and backward describe the same function.
    """

    leak: float = LEAK
    threshold: float = THRESHOLD
    alpha: float = ALPHA
    reset: str = "subtract"
    leak_mode: str = "fixed"
    surrogate: str = "centered"
    spike_mode: str = "hard"
    detach_reset: bool = True

    def __post_init__(self):
        if not 0.0 <= self.leak <= 1.0:
            raise ValueError(f"leak must lie in [0, 1], got {self.leak}")
        if self.threshold <= 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.reset != "subtract":
            raise ValueError("only subtract-reset is supported")
        if self.leak_mode not in ("fixed", "learned"):
            raise ValueError(f"leak_mode must be 'fixed' or 'learned', got {self.leak_mode!r}")
        if self.surrogate not in ("centered", "literal"):
            raise ValueError(f"surrogate must be 'centered' or 'literal', got {self.surrogate!r}")
        if self.spike_mode not in ("hard", "soft"):
            raise ValueError(f"spike_mode must be 'hard' or 'soft', got {self.spike_mode!r}")


@dataclass
class LifState:
    """Membrane potentials of one layer. ``u=None`` means all zeros."""

    u: Optional[Tensor] = None

    @classmethod
    def zeros(cls, shape) -> "LifState":
        return cls(Tensor(np.zeros(shape, dtype=tn.get_default_dtype())))


def _array(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=float)


def heaviside(x, threshold: float = THRESHOLD) -> np.ndarray:
    """1 where ``x >= threshold`` else 0."""
    x = _array(x)
    return (x >= threshold).astype(x.dtype)


def _offset(u: np.ndarray, params: LifParams) -> np.ndarray:
    return u - params.threshold if params.surrogate == "centered" else u


def surrogate_grad(u, params: LifParams) -> np.ndarray:
    """``alpha * max(0, 1 - |u - threshold|)``."""
    v = _offset(_array(u), params)
    return params.alpha * np.maximum(0.0, 1.0 - np.abs(v))


def soft_spike(u, params: LifParams) -> np.ndarray:
    """Antiderivative of :func:`surrogate_grad`, rising from 0 to ``alpha``."""
    v = np.clip(_offset(_array(u), params), -1.0, 1.0)
    a = params.alpha
    return np.where(v <= 0.0, 0.5 * a * (1.0 + v) ** 2, a - 0.5 * a * (1.0 - v) ** 2)


def spike(u: Tensor, params: LifParams) -> Tensor:
    """Spike nonlinearity as a tape op with the surrogate derivative."""
    d = surrogate_grad(u.data, params)
    if params.spike_mode == "soft":
        return tn.elementwise(u, soft_spike(u.data, params), d, "soft_spike")
    return tn.elementwise(u, heaviside(u.data, params.threshold), d, "spike")


def lif_step(state: LifState, current: Tensor, params: LifParams,
             leak: Union[float, Tensor, None] = None):
    """Advance one timestep; returns ``(spikes, new_state)``.

    ``leak`` overrides ``params.leak`` and may be a scalar tensor (learned
    leak), in which case its gradient flows through ``leak * u_prev``.
    """
    leak = params.leak if leak is None else leak
    if state.u is None:
        u = current
    else:
        if state.u.shape != current.shape:
            raise ShapeError(f"lif_step: state {state.u.shape} vs current {current.shape}")
        u = current + leak * state.u
    o = spike(u, params)
    if params.detach_reset and params.spike_mode == "hard":
        u_next = u - params.threshold * o.detach()
    else:
        u_next = u - params.threshold * o
    return o, LifState(u_next)


class PlifParam:
    """Learnable leak ``sigmoid(raw)``, constrained to (0, 1)."""

    def __init__(self, leak: float = LEAK, name: Optional[str] = None):
        self.raw = tn.parameter(logit(leak), name=name)

    def leak(self) -> Tensor:
        return plif_update_leak(self)

    @property
    def value(self) -> float:
        return float(_sigmoid(self.raw.data))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def logit(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"logit needs p in (0, 1), got {p}")
    return float(np.log(p) - np.log1p(-p))


def plif_update_leak(param: PlifParam) -> Tensor:
    s = _sigmoid(param.raw.data)
    return tn.elementwise(param.raw, s, s * (1.0 - s), "sigmoid")
