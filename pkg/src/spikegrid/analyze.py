"""Spiking activity and BNTT scale maps, with CSV export for plotting."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError


@dataclass
class ActivityRecord:
    """Per-layer, per-timestep measurements.

    ``fractions[l, t]`` is the share of neurons in layer ``l`` whose output
    is nonzero at step ``t``; ``volume[l, t]`` is the mean output value,
    which exceeds the fraction when residual sums produce values above 1.
    ``gamma`` holds channel-averaged BNTT scales when available.
    ``spikes[l][t]`` and ``outputs[t]`` (per-step output-layer currents)
    are kept only when raw recording is requested.
    """

    layer_names: list
    fractions: Optional[np.ndarray]
    volume: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None
    spikes: Optional[list] = None
    outputs: Optional[list] = None

    @property
    def shape(self):
        return self.fractions.shape


def activity_map(net, dataset, T: Optional[int] = None, batch_size: int = 100, preprocessor=None,
                 seed: int = 0) -> ActivityRecord:
    """Average firing fractions over every sample of ``dataset``.

    ``preprocessor`` (normalization or encoding) is applied to each batch
    first, drawing any randomness from ``seed``.
    """
    if len(dataset) == 0:
        raise ContractError("activity_map needs a non-empty dataset")
    was_training = net.training
    net.eval()
    frac = vol = None
    total = 0
    rng = np.random.default_rng(seed)
    try:
        for images, _ in dataset.batches(batch_size):
            if preprocessor is not None:
                images = preprocessor(images, rng)
            _, rec = net.forward(images, T, record_activity=True)
            w = images.shape[1] if images.ndim == 5 else len(images)
            frac = rec.fractions * w if frac is None else frac + rec.fractions * w
            vol = rec.volume * w if vol is None else vol + rec.volume * w
            total += w
    finally:
        net.train(was_training)
    gamma = gamma_map(net) if net.spec.bn == "bntt" else None
    if gamma is not None:
        gamma = gamma[:, : frac.shape[1]]
    return ActivityRecord(net.layer_names, frac / total, vol / total, gamma)


def gamma_map(net) -> np.ndarray:
    """Channel mean of each spiking layer's BNTT scale: shape (layers, T_train)."""
    if net.spec.bn != "bntt":
        raise ContractError("gamma_map requires per-timestep (BNTT) normalization")
    return np.array([[float(np.mean(g.data)) for g in bn.gamma] for bn in net.unit_norms()])


def export_csv(matrix, path, layer_names=None) -> None:
    """Write ``layer,t,value`` rows, layer-major, timesteps counted from 1."""
    if isinstance(matrix, ActivityRecord):
        layer_names = layer_names or matrix.layer_names
        matrix = matrix.fractions
    matrix = np.asarray(matrix, dtype=float)
    if layer_names is None:
        layer_names = [f"conv{i + 1}" for i in range(matrix.shape[0])]
    buf = io.StringIO()
    buf.write("layer,t,value\n")
    for name, row in zip(layer_names, matrix):
        for t, v in enumerate(row, start=1):
            buf.write(f"{name},{t},{v:.9g}\n")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_csv(path):
    """Parse a file written by :func:`export_csv`; returns ``(names, matrix)``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    names: list[str] = []
    cells: dict = {}
    for r in rows:
        if r["layer"] not in names:
            names.append(r["layer"])
        cells[(r["layer"], int(r["t"]))] = float(r["value"])
    T = max((t for _, t in cells), default=0)
    return names, np.array([[cells[(n, t)] for t in range(1, T + 1)] for n in names])
