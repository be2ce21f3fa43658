"""Confusion matrix, accuracy, per-category precision (PPV) and recall."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .signals import CATEGORY_SYMBOLS, NUM_CATEGORIES


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[i, j]`` = samples of true category ``i`` predicted as ``j``."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self, path, symbols=CATEGORY_SYMBOLS) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["true\\pred", *symbols])
            for sym, row in zip(symbols, self.counts):
                writer.writerow([sym, *(int(c) for c in row)])


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    precision_defined: np.ndarray
    recall_defined: np.ndarray

    def summary(self, symbols=CATEGORY_SYMBOLS) -> str:
        lines = [f"accuracy: {self.accuracy:.4f}", "category  precision  recall"]
        for k, sym in enumerate(symbols):
            p = f"{self.precision[k]:.4f}" + ("" if self.precision_defined[k] else "*")
            r = f"{self.recall[k]:.4f}" + ("" if self.recall_defined[k] else "*")
            lines.append(f"{sym:<9} {p:<10} {r}")
        if not (self.precision_defined.all() and self.recall_defined.all()):
            lines.append("* undefined (no predictions or no samples of that category), reported as 0")
        return "\n".join(lines)


def confusion(preds, labels, num_categories: int = NUM_CATEGORIES) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {len(preds)} predictions, {len(labels)} labels")
    for name, arr in (("prediction", preds), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_categories):
            raise ValueError(f"{name} index out of range 0..{num_categories - 1}")
    counts = np.bincount(labels * num_categories + preds, minlength=num_categories**2)
    return ConfusionMatrix(counts.reshape(num_categories, num_categories))


def metrics(matrix: ConfusionMatrix) -> Metrics:
    """Accuracy = trace / total; precision = diagonal / column sum; recall =
    diagonal / row sum. Empty columns or rows give 0 with the matching
    ``*_defined`` flag cleared."""
    m = matrix.counts
    total = m.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    diag = np.diag(m)
    col, row = m.sum(axis=0), m.sum(axis=1)
    precision = np.divide(diag, col, out=np.zeros(len(diag)), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros(len(diag)), where=row > 0)
    return Metrics(float(diag.sum() / total), precision, recall, col > 0, row > 0)


def evaluate(preds, labels, num_categories: int = NUM_CATEGORIES) -> tuple[ConfusionMatrix, Metrics]:
    cm = confusion(preds, labels, num_categories)
    return cm, metrics(cm)
