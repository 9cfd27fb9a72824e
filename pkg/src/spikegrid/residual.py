"""Spiking residual connections.

Three ways to merge a skip path into a block's output layer:

* ``S2M`` adds ``w_prime * spikes`` of the block input to the output
  layer's membrane current, before thresholding.
* ``S2S`` adds the block input activations to the output layer's spikes,
  after thresholding, so activations can exceed 1.
* ``V2V`` carries the total input current of the previous block's output
  layer forward and adds it to this block's output-layer current. Across
  blocks the carrier is the running sum of those currents.

When resolution or width changes, the skip path goes through a learnable
strided 1x1 convolution with no spiking function on it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from . import tensor as tn
from .errors import ShapeError
from .tensor import Tensor


class Mode(str, enum.Enum):
    S2M = "S2M"
    S2S = "S2S"
    V2V = "V2V"


@dataclass(frozen=True)
class ConnectionMode:
    """Residual semantics; ``w_prime`` is the fixed S2M skip weight."""

    kind: Mode = Mode.S2S
    w_prime: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Mode(self.kind))

    @property
    def name(self) -> str:
        return self.kind.value


def _same_shape(op, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: main path {a.shape} and residual {b.shape} differ; project the residual first")


def s2m_apply(membrane_current: Tensor, residual_spikes: Tensor, w_prime: float = 1.0) -> Tensor:
    _same_shape("s2m", membrane_current, residual_spikes)
    return membrane_current + w_prime * residual_spikes


def s2s_apply(spikes: Tensor, residual: Tensor, projection: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """``spikes + residual``, projecting the residual first if a weight is given."""
    if projection is not None:
        residual = downsample_project(residual, projection, stride)
    _same_shape("s2s", spikes, residual)
    return spikes + residual


def v2v_apply(layer_input_psp: Tensor, incoming_r: Optional[Tensor]) -> Tensor:
    """New voltage carrier: this layer's input current plus the incoming carrier."""
    if incoming_r is None:
        return layer_input_psp
    _same_shape("v2v", layer_input_psp, incoming_r)
    return layer_input_psp + incoming_r


def v2v_inject(membrane_current: Tensor, r: Tensor) -> Tensor:
    _same_shape("v2v", membrane_current, r)
    return membrane_current + r


def downsample_project(residual: Tensor, weight: Tensor, stride: int = 1) -> Tensor:
    """Strided 1x1 convolution of the skip path."""
    if stride not in (1, 2):
        raise ShapeError(f"projection stride must be 1 or 2, got {stride}")
    if weight.ndim != 4 or weight.shape[2:] != (1, 1):
        raise ShapeError(f"projection weight must be [C2, C1, 1, 1], got {weight.shape}")
    return tn.conv2d(residual, weight, stride, 0)
