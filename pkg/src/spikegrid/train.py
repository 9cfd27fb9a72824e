"""Cross-entropy training through time, evaluation and fine-tuning."""

from __future__ import annotations

import csv
import dataclasses
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset, load_checkpoint, read_checkpoint, save_checkpoint
from .encode import augment, poisson_encode
from .errors import ContractError, NumericError
from .network import Network, NetworkSpec
from .optim import LEARNING_RATE, MILESTONES, SGD, MultiStepSchedule
from .tensor import Tape, cross_entropy

__all__ = [
    "EpochStats", "EvalResult", "Preprocessor", "PRESETS", "TrainConfig", "TrainReport", "bptt_step",
    "cross_entropy", "evaluate", "fine_tune", "fit", "prepare_fine_tune",
]


@dataclass
class TrainConfig:
    lr: float = LEARNING_RATE
    batch: int = 21
    epochs: int = 70
    momentum: float = 0.9
    weight_decay: float = 0.0
    milestones: tuple = MILESTONES
    T: Optional[int] = None
    seed: int = 0
    encoding: str = "direct"
    normalize: bool = True
    augment: bool = False
    pad: int = 4
    hflip_p: float = 0.5
    clip_norm: Optional[float] = None
    checkpoint_dir: Optional[str] = None
    eval_batch: int = 100

    def __post_init__(self):
        self.milestones = tuple(self.milestones)
        if self.lr < 0:
            raise ContractError("lr must be non-negative")
        if self.batch < 2:
            raise ContractError("batch must be >= 2 (batch statistics need two samples)")
        if list(self.milestones) != sorted(self.milestones) or any(not 0 < m < 1 for m in self.milestones):
            raise ContractError("milestones must be sorted fractions in (0, 1)")
        if self.encoding not in ("direct", "poisson", "events"):
            raise ContractError(f"unknown encoding {self.encoding!r}")


# Full-size regimes; shipped for completeness, far beyond desk scale.
PRESETS = {
    "cifar10": ({"n": 6, "base_filters": 32, "boosting": True, "classes": 10}, {"epochs": 70}),
    "cifar100": ({"n": 6, "base_filters": 32, "classes": 100}, {"epochs": 70}),
    "cifar10-narrow": ({"n": 6, "base_filters": 16, "classes": 10}, {"epochs": 200}),
    "dvs-cifar10": ({"n": 6, "base_filters": 16, "classes": 10, "in_channels": 2, "stem": "s64"},
                    {"epochs": 70, "encoding": "events", "normalize": False, "milestones": (0.5, 0.7, 0.9)}),
    "tiny-synth": ({"n": 1, "base_filters": 8, "T_train": 4, "classes": 10, "mode": "S2S"},
                   {"epochs": 10, "batch": 25, "lr": 0.05, "T": 4, "milestones": ()}),
}


@dataclass
class Preprocessor:
    """Normalization and spike encoding applied to each batch."""

    mean: Optional[list] = None
    std: Optional[list] = None
    encoding: str = "direct"
    T: int = 1

    @classmethod
    def fit(cls, dataset: Dataset, config: TrainConfig, T: int) -> "Preprocessor":
        if not config.normalize or config.encoding != "direct":
            return cls(None, None, config.encoding, T)
        axes = (0, 2, 3)
        mean = dataset.images.mean(axis=axes)
        std = dataset.images.std(axis=axes)
        return cls(mean.tolist(), np.maximum(std, 1e-8).tolist(), config.encoding, T)

    def __call__(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.encoding == "poisson":
            return poisson_encode(np.clip(x, 0.0, 1.0), self.T, rng)
        if self.mean is not None:
            m = np.asarray(self.mean).reshape(1, -1, 1, 1)
            s = np.asarray(self.std).reshape(1, -1, 1, 1)
            x = (x - m) / s
        return x

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_accuracy: float
    eval_accuracy: float
    seconds: float


@dataclass
class TrainReport:
    """Per-epoch history.

    ``validation_accuracy`` is the best eval accuracy seen at any epoch;
    ``test_accuracy`` is the eval accuracy after the final epoch.
    """

    epochs: list = field(default_factory=list)
    checkpoint: Optional[str] = None
    preprocessor: Optional[Preprocessor] = None

    @property
    def losses(self) -> list:
        return [e.train_loss for e in self.epochs]

    @property
    def validation_accuracy(self) -> float:
        return max((e.eval_accuracy for e in self.epochs), default=float("nan"))

    @property
    def test_accuracy(self) -> float:
        return self.epochs[-1].eval_accuracy if self.epochs else float("nan")

    @property
    def train_accuracy(self) -> float:
        return self.epochs[-1].train_accuracy if self.epochs else float("nan")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "lr", "train_loss", "train_accuracy", "eval_accuracy"])
            for e in self.epochs:
                w.writerow([e.epoch, f"{e.lr:.9g}", f"{e.train_loss:.17g}", f"{e.train_accuracy:.9g}",
                            f"{e.eval_accuracy:.9g}"])

    def summary(self) -> str:
        return (f"epochs: {len(self.epochs)}\n"
                f"final train loss: {self.losses[-1]:.6f}\n"
                f"final train accuracy: {self.train_accuracy:.4f}\n"
                f"validation accuracy (best epoch): {self.validation_accuracy:.4f}\n"
                f"test accuracy (final epoch): {self.test_accuracy:.4f}\n"
                f"checkpoint: {self.checkpoint}\n")


def bptt_step(net: Network, x, labels, T: Optional[int] = None, return_logits: bool = False):
    """Forward ``T`` steps on one tape and backpropagate the loss.

    Returns ``(loss, grads)`` (plus the logits array when asked).
    """
    net.train()
    with Tape() as tape:
        logits, _ = net.forward(x, T)
        loss = cross_entropy(logits, labels)
    value = loss.item()
    if not np.isfinite(value):
        raise NumericError(f"loss is {value}")
    grads = tape.backward(loss)
    if return_logits:
        return value, grads, logits.data
    return value, grads


@dataclass
class EvalResult:
    accuracy: float
    correct: np.ndarray
    total: np.ndarray
    predictions: np.ndarray


def evaluate(net: Network, dataset: Dataset, preprocessor: Optional[Preprocessor] = None,
             T: Optional[int] = None, batch_size: int = 100, seed: int = 0) -> EvalResult:
    """Accuracy and per-class counts with the network in eval mode."""
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    was_training = net.training
    net.eval()
    rng = np.random.default_rng(seed)
    preds = []
    try:
        for x, _ in dataset.batches(batch_size):
            if preprocessor is not None:
                x = preprocessor(x, rng)
            logits, _ = net.forward(x, T)
            preds.append(np.argmax(logits.data, axis=1))
    finally:
        net.train(was_training)
    pred = np.concatenate(preds)
    hit = pred == dataset.labels
    total = np.bincount(dataset.labels, minlength=dataset.classes)
    correct = np.bincount(dataset.labels[hit], minlength=dataset.classes)
    return EvalResult(float(hit.mean()), correct, total, pred)


def fit(net: Network, train_set: Dataset, eval_set: Optional[Dataset], config: TrainConfig,
        preprocessor: Optional[Preprocessor] = None, optimizer: Optional[SGD] = None, log=None) -> TrainReport:
    """SGD-with-momentum training with milestone learning-rate drops."""
    if len(train_set) == 0 or (eval_set is not None and len(eval_set) == 0):
        raise ContractError("training and evaluation sets must be non-empty")
    T = config.T or net.spec.T_train
    rng = np.random.default_rng(config.seed)
    prep = preprocessor or Preprocessor.fit(train_set, config, T)
    opt = optimizer or SGD(net.named_parameters(), config.lr, config.momentum, config.weight_decay,
                           config.clip_norm)
    schedule = MultiStepSchedule(config.lr, config.epochs, config.milestones)
    report = TrainReport(preprocessor=prep)
    for epoch in range(config.epochs):
        start = time.perf_counter()
        opt.lr = schedule.lr_at(epoch)
        loss_sum = 0.0
        correct = seen = 0
        for x, y in train_set.batches(config.batch, rng):
            if len(y) < 2:
                continue
            if config.augment:
                x = augment(x, config.pad, None, config.hflip_p, rng)
            x = prep(x, rng)
            loss, grads, logits = bptt_step(net, x, y, T, return_logits=True)
            opt.step(grads)
            loss_sum += loss * len(y)
            correct += int(np.sum(np.argmax(logits, axis=1) == y))
            seen += len(y)
        eval_acc = float("nan")
        if eval_set is not None:
            eval_acc = evaluate(net, eval_set, prep, T, config.eval_batch, config.seed).accuracy
        stats = EpochStats(epoch + 1, opt.lr, loss_sum / seen, correct / seen, eval_acc, time.perf_counter() - start)
        report.epochs.append(stats)
        if log is not None:
            log(stats)
        if config.checkpoint_dir:
            path = os.path.join(config.checkpoint_dir, f"epoch{epoch + 1:03d}.ckpt")
            meta = {"preprocessor": prep.to_dict(), "eval_accuracy": eval_acc}
            save_checkpoint(net, opt, path, epoch=epoch + 1, metadata=meta)
            last = os.path.join(config.checkpoint_dir, "final.ckpt")
            save_checkpoint(net, opt, last, epoch=epoch + 1, metadata=meta)
            report.checkpoint = last
    net.eval()
    return report


def prepare_fine_tune(checkpoint, new_classes: int, seed: Optional[int] = None) -> Network:
    """Load a checkpoint, replacing the output layer if the class count changes.

    All other tensors must match exactly; otherwise a :class:`TopologyError`
    lists the tensors that differ.
    """
    ck = read_checkpoint(checkpoint)
    stored = NetworkSpec.from_dict(ck.header["spec"])
    if new_classes == stored.classes:
        net, _ = load_checkpoint(checkpoint)
        return net
    spec = stored.replace(classes=new_classes, seed=stored.seed if seed is None else seed)
    net = Network(spec)
    head = {n for n in net.named_parameters() if n.startswith("fc.")}
    head |= {n for n in ck.params if n.startswith("fc.")}
    state = {**ck.params, **ck.buffers}
    net.load_state_dict(state, strict=True, skip=head)
    return net


def fine_tune(checkpoint, new_classes: int, train_set: Dataset, eval_set: Optional[Dataset],
              config: TrainConfig):
    """:func:`prepare_fine_tune` followed by :func:`fit`; returns ``(net, report)``."""
    net = prepare_fine_tune(checkpoint, new_classes, config.seed)
    return net, fit(net, train_set, eval_set, config)


def dataset_preprocessor(checkpoint) -> Optional[Preprocessor]:
    """Preprocessor stored in a checkpoint's metadata, if any."""
    meta = read_checkpoint(checkpoint).header.get("metadata", {})
    d = meta.get("preprocessor")
    return Preprocessor(**d) if d else None
