"""Dataset readers, the synthetic pattern set, and checkpoint files."""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .encode import Event
from .errors import CheckpointError, ChecksumError, ContractError, FormatError, TopologyError

CIFAR_PIXELS = 3 * 32 * 32


class LabeledSample(NamedTuple):
    image: np.ndarray
    label: int


@dataclass
class Dataset:
    """Images ``[N, C, H, W]`` (or sequences ``[N, T, C, H, W]``) with labels."""

    images: np.ndarray
    labels: np.ndarray
    classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ContractError("images and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ContractError(f"labels must lie in [0, {self.classes})")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> LabeledSample:
        return LabeledSample(self.images[i], int(self.labels[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, index) -> "Dataset":
        return Dataset(self.images[index], self.labels[index], self.classes)

    def batches(self, batch_size: int, rng: Optional[np.random.Generator] = None):
        """Yield ``(inputs, labels)`` with sequences moved to time-major layout."""
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for i in range(0, len(order), batch_size):
            idx = order[i:i + batch_size]
            x = self.images[idx]
            if x.ndim == 5:
                x = np.swapaxes(x, 0, 1)
            yield x, self.labels[idx]


def read_cifar_binary(path, variant: str = "cifar10") -> Dataset:
    """Parse the CIFAR binary format; pixels are scaled to [0, 1].

    CIFAR-100 records carry a coarse and a fine label byte; the fine label
    is kept.
    """
    label_bytes = {"cifar10": 1, "cifar100": 2}[variant]
    record = label_bytes + CIFAR_PIXELS
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) % record:
        raise FormatError(f"{path}: truncated CIFAR file ({len(raw)} bytes is not a multiple of {record})")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
    labels = arr[:, label_bytes - 1].astype(np.int64)
    images = arr[:, label_bytes:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return Dataset(images, labels, 10 if variant == "cifar10" else 100)


def read_event_csv(path) -> list[Event]:
    """One ``t,x,y,p`` event per line, returned stably sorted by timestamp."""
    events = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            try:
                if len(parts) != 4:
                    raise ValueError(f"expected 4 fields, got {len(parts)}")
                t, x, y, p = (int(v) for v in parts)
            except ValueError as exc:
                raise ContractError(f"{path}:{lineno}: malformed event line {line!r} ({exc})") from None
            if p not in (0, 1):
                raise ContractError(f"{path}:{lineno}: polarity must be 0 or 1, got {p}")
            if t < 0 or x < 0 or y < 0:
                raise ContractError(f"{path}:{lineno}: negative timestamp or coordinate")
            events.append(Event(t, x, y, p))
    events.sort(key=lambda e: e.t)
    return events


def _prototypes(classes: int, shape, rng: np.random.Generator) -> np.ndarray:
    C, H, W = shape
    yy, xx = np.meshgrid(np.linspace(0, 1, H), np.linspace(0, 1, W), indexing="ij")
    golden = (np.sqrt(5) - 1) / 2
    protos = np.empty((classes, C, H, W))
    for k in range(classes):
        theta = np.pi * ((k * golden) % 1.0)
        freq = 1.0 + (k % 3)
        phase = rng.uniform(0, 2 * np.pi, C)
        wave = xx * np.cos(theta) + yy * np.sin(theta)
        for c in range(C):
            protos[k, c] = 0.5 + 0.5 * np.sin(2 * np.pi * freq * wave + phase[c])
    return protos


def synth_dataset(classes: int = 10, per_class: int = 100, shape=(3, 16, 16), noise: float = 0.3,
                  seed: int = 0) -> Dataset:
    """Noisy oriented gratings, one orientation/frequency/colour per class.

    Values are clipped to [0, 1]. The same seed yields the same set.
    """
    if classes < 2:
        raise ContractError("synth_dataset needs at least 2 classes")
    rng = np.random.default_rng(seed)
    protos = _prototypes(classes, tuple(shape), rng)
    labels = np.repeat(np.arange(classes), per_class)
    images = protos[labels] + noise * rng.standard_normal((labels.size,) + tuple(shape))
    order = rng.permutation(labels.size)
    return Dataset(np.clip(images[order], 0.0, 1.0), labels[order], classes)


def synth_split(classes: int = 10, train_per_class: int = 100, eval_per_class: int = 20, shape=(3, 16, 16),
                noise: float = 0.3, seed: int = 0):
    """Class-balanced train/eval split of one :func:`synth_dataset` draw."""
    full = synth_dataset(classes, train_per_class + eval_per_class, shape, noise, seed)
    train_idx, eval_idx = [], []
    for k in range(classes):
        idx = np.flatnonzero(full.labels == k)
        train_idx.append(idx[:train_per_class])
        eval_idx.append(idx[train_per_class:])
    return full.subset(np.sort(np.concatenate(train_idx))), full.subset(np.sort(np.concatenate(eval_idx)))


# ------------------------------------------------------------ checkpoints

MAGIC = b"SRNC1"
VERSION = 1
_KINDS = {"param": 0, "buffer": 1, "optimizer": 2}


def _pack_tensor(name: str, kind: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f8", order="C")  # keeps 0-d shapes, unlike ascontiguousarray
    key = name.encode()
    head = struct.pack("<H", len(key)) + key + struct.pack("<BB", _KINDS[kind], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(net, optimizer, path, *, epoch: int = 0, metadata: Optional[dict] = None) -> None:
    """Write parameters, running statistics and momentum buffers to ``path``."""
    header = {
        "spec": net.spec.to_dict(),
        "seed": net.spec.seed,
        "epoch": epoch,
        "optimizer": optimizer.state() if optimizer is not None else None,
        "metadata": metadata or {},
    }
    entries = [(n, "param", p.data) for n, p in net.named_parameters().items()]
    entries += [(n, "buffer", b) for n, b in net.buffers().items()]
    if optimizer is not None:
        entries += [(n, "optimizer", v) for n, v in sorted(optimizer.buffers.items())]
    hjson = json.dumps(header, sort_keys=True).encode()
    body = MAGIC + struct.pack("<HI", VERSION, len(hjson)) + hjson + struct.pack("<I", len(entries))
    body += b"".join(_pack_tensor(*e) for e in entries)
    blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    tmp = f"{path}.tmp"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


@dataclass
class CheckpointContents:
    header: dict
    params: dict
    buffers: dict
    optimizer: dict


def read_checkpoint(path) -> CheckpointContents:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(blob) < len(MAGIC) + 10:
        raise CheckpointError(f"{path}: truncated checkpoint")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{path}: checksum mismatch, file is corrupted")
    pos = len(MAGIC)
    version, hlen = struct.unpack_from("<HI", body, pos)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos += 6
    header = json.loads(body[pos:pos + hlen].decode())
    pos += hlen
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    groups = {0: {}, 1: {}, 2: {}}
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos:pos + klen].decode()
        pos += klen
        kind, ndim = struct.unpack_from("<BB", body, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
        n = int(np.prod(shape, dtype=np.int64))
        groups[kind][name] = np.frombuffer(body, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        pos += 8 * n
    return CheckpointContents(header, groups[0], groups[1], groups[2])


def load_checkpoint(path, spec=None):
    """Rebuild ``(network, optimizer)`` from a checkpoint.

    If ``spec`` is given the stored tensors must fit it, otherwise a
    :class:`TopologyError` lists the differing tensors.
    """
    from .network import Network, NetworkSpec
    from .optim import SGD

    ck = read_checkpoint(path)
    stored = NetworkSpec.from_dict(ck.header["spec"])
    net = Network(spec if spec is not None else stored)
    net.load_state_dict({**ck.params, **ck.buffers})
    opt = None
    if ck.header.get("optimizer") is not None:
        opt = SGD(net.named_parameters(), **ck.header["optimizer"])
        opt.buffers = dict(ck.optimizer)
    return net, opt


def checkpoint_diff(path, net) -> list:
    """Tensors whose presence or shape differs between ``path`` and ``net``."""
    ck = read_checkpoint(path)
    stored = {**ck.params, **ck.buffers}
    own = {**{n: p.shape for n, p in net.named_parameters().items()},
           **{n: b.shape for n, b in net.buffers().items()}}
    diffs = [(n, s, stored[n].shape if n in stored else None) for n, s in own.items()
             if n not in stored or stored[n].shape != s]
    diffs += [(n, None, a.shape) for n, a in stored.items() if n not in own]
    return diffs


__all__ = [
    "CheckpointContents", "Dataset", "LabeledSample", "TopologyError", "checkpoint_diff", "load_checkpoint",
    "read_checkpoint", "read_cifar_binary", "read_event_csv", "save_checkpoint", "synth_dataset", "synth_split",
]
