"""Turning frames and event streams into per-timestep network input."""

from __future__ import annotations

from typing import Iterable, NamedTuple, Optional

import numpy as np

from .errors import ContractError, ShapeError


class Event(NamedTuple):
    """One DVS event: timestamp in microseconds, pixel, polarity (0 or 1)."""

    t: int
    x: int
    y: int
    p: int


def poisson_encode(image, T: int, seed=None) -> np.ndarray:
    """Independent Bernoulli spikes with probability equal to intensity.

    ``image`` must already lie in [0, 1]; the result has shape ``(T, *image.shape)``.
    """
    image = np.asarray(image, dtype=float)
    if image.size and (image.min() < 0.0 or image.max() > 1.0):
        raise ContractError("poisson_encode expects intensities in [0, 1]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return (rng.random((T,) + image.shape) < image).astype(image.dtype)


def direct_encode(image, T: int) -> np.ndarray:
    """The same frame at every step, as a read-only broadcast view."""
    image = np.asarray(image)
    return np.broadcast_to(image, (T,) + image.shape)


def _event_arrays(events):
    if isinstance(events, np.ndarray) and events.dtype.names:
        return (np.asarray(events[k], dtype=np.int64) for k in ("t", "x", "y", "p"))
    arr = np.asarray(list(events), dtype=np.int64).reshape(-1, 4)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


def events_to_frames(events: Iterable, T: int, H: int, W: int, window: str = "duration",
                     binarize: bool = False, duration: Optional[int] = None) -> np.ndarray:
    """Accumulate events into ``(T, 2, H, W)`` frames.

    Channel index equals polarity (0 = negative, 1 = positive). With
    ``window="duration"`` the span from the first timestamp covering
    ``duration`` microseconds (default: last - first + 1) is cut into ``T``
    equal windows, the last one closed on the right. ``window="count"``
    gives each frame an equal share of the events instead.
    """
    t, x, y, p = _event_arrays(events)
    if t.size == 0:
        raise ContractError("events_to_frames needs at least one event")
    if T < 1:
        raise ContractError("T must be >= 1")
    if x.min() < 0 or y.min() < 0 or x.max() >= W or y.max() >= H:
        raise ShapeError(f"event coordinates outside a {H}x{W} sensor")
    if not np.isin(p, (0, 1)).all():
        raise ContractError("event polarity must be 0 or 1")
    order = np.argsort(t, kind="stable")
    t, x, y, p = t[order], x[order], y[order], p[order]
    if window == "duration":
        span = duration if duration is not None else int(t[-1] - t[0] + 1)
        idx = np.floor((t - t[0]) * T / span).astype(np.int64)
        idx = np.clip(idx, 0, T - 1)
    elif window == "count":
        idx = np.repeat(np.arange(T), [len(c) for c in np.array_split(np.arange(t.size), T)])
    else:
        raise ValueError(f"unknown window mode {window!r}")
    frames = np.zeros((T, 2, H, W))
    np.add.at(frames, (idx, p, y, x), 1.0)
    if binarize:
        np.minimum(frames, 1.0, out=frames)
    return frames


def normalize(image, mean, std) -> np.ndarray:
    """Per-channel ``(x - mean) / std`` for a ``[..., C, H, W]`` array."""
    image = np.asarray(image, dtype=float)
    mean = np.asarray(mean, dtype=float).reshape(-1, 1, 1)
    std = np.asarray(std, dtype=float).reshape(-1, 1, 1)
    if np.any(std <= 0):
        raise ContractError("normalize: std must be positive")
    return (image - mean) / std


def augment(image, pad: int = 4, crop=None, hflip_p: float = 0.5, seed=None) -> np.ndarray:
    """Zero-pad, randomly crop back to ``crop`` and randomly flip horizontally.

    Works on ``[C, H, W]`` or a batch ``[N, C, H, W]`` (independent draws).
    """
    image = np.asarray(image)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if image.ndim == 4:
        return np.stack([augment(im, pad, crop, hflip_p, rng) for im in image])
    C, H, W = image.shape
    ch, cw = (H, W) if crop is None else ((crop, crop) if np.isscalar(crop) else crop)
    padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)))
    top = rng.integers(0, padded.shape[1] - ch + 1)
    left = rng.integers(0, padded.shape[2] - cw + 1)
    out = padded[:, top:top + ch, left:left + cw]
    if rng.random() < hflip_p:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)
