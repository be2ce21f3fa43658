"""Cross-entropy loss, Adam, the plateau learning-rate rule and the epoch loop."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .nn import Mode, Network

log = logging.getLogger(__name__)

LR_FLOOR = 1e-6


class DivergenceError(FloatingPointError):
    """Raised on a non-finite loss or gradient; carries the partial report."""

    def __init__(self, message: str, report: "TrainReport | None" = None, parameter: str | None = None):
        super().__init__(message)
        self.report = report
        self.parameter = parameter


def softmax(logits) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient ``(softmax - onehot) / B``."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    B, K = logits.shape
    if labels.shape != (B,):
        raise ValueError(f"expected {B} labels, got shape {labels.shape}")
    if B and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"label out of range 0..{K - 1}")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / B


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def tensors(self) -> dict:
        """Moments and step count as named arrays, for checkpointing."""
        out = {f"adam.m.{k}": a for k, a in self.m.items()}
        out.update({f"adam.v.{k}": a for k, a in self.v.items()})
        out["adam.t"] = np.array([self.t], dtype=np.float64)
        return out

    @classmethod
    def from_tensors(cls, tensors: dict, params: dict) -> "AdamState":
        state = cls()
        if "adam.t" in tensors:
            state.t = int(tensors["adam.t"][0])
        for k, p in params.items():
            if f"adam.m.{k}" in tensors:
                state.m[k] = tensors[f"adam.m.{k}"].astype(p.dtype)
                state.v[k] = tensors[f"adam.v.{k}"].astype(p.dtype)
        return state


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    Raises:
        DivergenceError: a gradient is not finite; nothing is updated.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"divergence detected in gradient of {name}", parameter=name)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.t
    c2 = 1 - b2**state.t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.002
    epochs: int = 100
    batch_size: int = 128
    shuffle: bool = True
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    seed: int = 0
    validation_fraction: float = 0.1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1 or self.plateau_patience < 1:
            raise ValueError("epochs, batch_size and plateau_patience must be positive")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")


def plateau_lr(history: Sequence[float], config: TrainConfig) -> float:
    """Learning rate after the epochs in ``history`` (validation accuracies).

    An epoch is bad unless it strictly beats every earlier epoch; the first
    epoch is the reference and counts as bad. After ``plateau_patience``
    consecutive bad epochs the rate is multiplied by ``plateau_factor`` and
    the count restarts. Reductions stop at ``LR_FLOOR``; a rate configured
    below the floor is left alone rather than raised.
    """
    lr = config.learning_rate
    if not len(history):
        return lr
    best = history[0]
    wait = 0
    for i, acc in enumerate(history):
        if i and acc > best:
            best = acc
            wait = 0
            continue
        wait += 1
        if wait >= config.plateau_patience:
            lr = max(lr * config.plateau_factor, min(lr, LR_FLOOR))
            wait = 0
    return lr


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    val_acc: float
    lr: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    seconds: float = 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "loss", "train_acc", "val_acc", "lr"])
            for r in self.epochs:
                writer.writerow([r.epoch, repr(r.loss), repr(r.train_acc), repr(r.val_acc), repr(r.lr)])

    @property
    def learning_rates(self) -> list[float]:
        return [r.lr for r in self.epochs]


def accuracy(model: Network, x, y, batch_size: int = 512) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(model.predict(x, batch_size) == np.asarray(y)))


def train(
    model: Network,
    train_x,
    train_y,
    val_x=None,
    val_y=None,
    config: TrainConfig = TrainConfig(),
    rng: np.random.Generator | None = None,
    on_epoch: Callable[[EpochRecord, Network], None] | None = None,
) -> tuple[Network, TrainReport]:
    """Mini-batch Adam training, in place on ``model``.

    Each epoch shuffles (seeded), runs every mini-batch including the last
    partial one, then scores the validation set in eval mode and applies
    the plateau rule. Without a validation set the plateau rule monitors
    training accuracy.

    Raises:
        DivergenceError: non-finite loss or gradient; ``exc.report`` holds the
            completed epochs.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    x = np.asarray(train_x, dtype=model.dtype)
    if x.ndim == 2:
        x = x[:, None, :]
    y = np.asarray(train_y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("empty training set")
    has_val = val_x is not None and len(val_y) > 0
    report = TrainReport()
    state = AdamState()
    history: list[float] = []
    lr = config.learning_rate
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(x)) if config.shuffle else np.arange(len(x))
        total_loss = 0.0
        correct = 0
        for i in range(0, len(x), config.batch_size):
            idx = order[i : i + config.batch_size]
            xb, yb = x[idx], y[idx]
            logits, tape = model.forward_with_tape(xb, Mode.TRAIN, rng)
            loss, dlogits = softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss):
                report.seconds = time.perf_counter() - start
                raise DivergenceError(f"divergence detected: non-finite loss at epoch {epoch}", report)
            try:
                adam_step(model.params, model.backward(tape, dlogits), state, lr)
            except DivergenceError as exc:
                report.seconds = time.perf_counter() - start
                exc.report = report
                raise
            total_loss += loss * len(idx)
            correct += int(np.sum(logits.argmax(axis=1) == yb))
        train_acc = correct / len(x)
        val_acc = accuracy(model, val_x, val_y) if has_val else train_acc
        history.append(val_acc)
        record = EpochRecord(epoch, total_loss / len(x), train_acc, val_acc, lr)
        report.epochs.append(record)
        log.debug("epoch %d loss %.4f train %.4f val %.4f lr %.2g", epoch, record.loss, train_acc, val_acc, lr)
        if on_epoch is not None:
            on_epoch(record, model)
        lr = plateau_lr(history, config)
    report.seconds = time.perf_counter() - start
    return model, report
