"""Standardization, QRS-anchored window enlargement, class balancing and splitting."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .signals import (
    BeatAnnotation,
    Dataset,
    EcgRecord,
    LabeledSegment,
    Provenance,
    RhythmCategory,
)
from .wavelet import WaveletSpec, denoise


class ZeroVarianceError(ValueError):
    pass


class ClassBalanceError(ValueError):
    def __init__(self, category: RhythmCategory, available: int, requested: int):
        super().__init__(f"category {category.name} has {available} < {requested}")
        self.category = category
        self.shortfall = requested - available


@dataclass(frozen=True)
class WindowConfig:
    window_size: int = 600
    step: int = 20

    def __post_init__(self):
        if self.window_size < 1 or self.step < 1:
            raise ValueError("window_size and step must be positive")
        if not self.window_size > self.step:
            raise ValueError(f"window_size {self.window_size} must exceed step {self.step}")


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.8
    seed: int = 0
    record_disjoint: bool = False

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")


def standardize(segment) -> np.ndarray:
    """Zero mean, unit population standard deviation.

    Raises:
        ZeroVarianceError: the segment is constant (or shorter than 2 samples).
    """
    x = np.asarray(segment, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ZeroVarianceError("zero variance: segment shorter than 2 samples")
    centered = x - x.mean(axis=-1, keepdims=True)
    std = np.sqrt(np.mean(centered**2, axis=-1, keepdims=True))
    if np.any(std <= 1e-12 * np.maximum(1.0, np.abs(x).max(axis=-1, keepdims=True))):
        raise ZeroVarianceError("zero variance")
    return centered / std


def window_starts(qrs_start: int, qrs_end: int, record_length: int, config: WindowConfig) -> list[int]:
    """Admissible window offsets on the grid anchored where a window first covers the QRS end.

    Offsets that would leave the record are discarded; the grid is not re-anchored.
    """
    N, n = config.window_size, config.step
    first = qrs_end - N
    starts = []
    s = first
    while s <= qrs_start:
        if s >= 0 and s + N <= record_length:
            starts.append(s)
        s += n
    return starts


def slide_windows(record: EcgRecord, annotation: BeatAnnotation, config: WindowConfig = WindowConfig()) -> list[LabeledSegment]:
    """Every window of ``config.window_size`` samples that contains the annotated QRS complex."""
    if annotation.qrs_length > config.window_size:
        raise ValueError(
            f"QRS length {annotation.qrs_length} exceeds window size {config.window_size}"
        )
    samples = record.samples
    return [
        LabeledSegment(
            samples[s : s + config.window_size],
            annotation.category,
            record.record_id,
            Provenance.WINDOW_AUGMENTED,
        )
        for s in window_starts(annotation.qrs_start, annotation.qrs_end, len(samples), config)
    ]


def prepare_segments(
    segments: np.ndarray,
    wavelet: WaveletSpec | None = WaveletSpec(),
    zero_levels: Iterable[int] = (1, 2),
) -> tuple[np.ndarray, np.ndarray]:
    """Denoise then standardize each row of ``segments``.

    Returns the processed rows and a boolean mask of rows kept (constant rows
    are dropped).
    """
    x = np.atleast_2d(np.asarray(segments, dtype=np.float64))
    if wavelet is not None and len(x):
        x = denoise(x, wavelet, zero_levels)
    centered = x - x.mean(axis=1, keepdims=True)
    std = np.sqrt(np.mean(centered**2, axis=1))
    keep = std > 1e-12 * np.maximum(1.0, np.abs(x).max(axis=1, initial=0.0))
    return centered[keep] / std[keep, None], keep


def preprocess_records(
    records: Iterable[EcgRecord],
    window: WindowConfig = WindowConfig(),
    wavelet: WaveletSpec | None = WaveletSpec(),
    zero_levels: Iterable[int] = (1, 2),
) -> Dataset:
    """Enlarge every annotated beat, denoise each window, then standardize it."""
    zero_levels = tuple(zero_levels)
    segments = []
    for record in records:
        for ann in record.annotations:
            windows = slide_windows(record, ann, window)
            if not windows:
                continue
            raw = np.stack([w.samples for w in windows])
            clean, keep = prepare_segments(raw, wavelet, zero_levels)
            kept = [w for w, k in zip(windows, keep) if k]
            segments.extend(w.with_samples(row) for w, row in zip(kept, clean))
    return Dataset(tuple(segments), window.window_size)


def balance_classes(dataset: Dataset, per_class: int, seed: int = 0) -> Dataset:
    """Exactly ``per_class`` segments of every category, sampled without replacement.

    Selected segments keep their original relative order.
    """
    by_cat = defaultdict(list)
    for i, s in enumerate(dataset):
        by_cat[s.category].append(i)
    for cat in RhythmCategory:
        if len(by_cat[cat]) < per_class:
            raise ClassBalanceError(cat, len(by_cat[cat]), per_class)
    rng = np.random.default_rng(seed)
    chosen = []
    for cat in RhythmCategory:
        idx = np.asarray(by_cat[cat])
        chosen.extend(idx[rng.choice(len(idx), size=per_class, replace=False)].tolist())
    return dataset.subset(sorted(chosen))


def split_indices(dataset: Dataset, config: SplitConfig) -> tuple[list[int], list[int]]:
    size = len(dataset)
    target = int(round(config.train_fraction * size))
    rng = np.random.default_rng(config.seed)
    if not config.record_disjoint:
        order = rng.permutation(size)
        return sorted(order[:target].tolist()), sorted(order[target:].tolist())
    groups = defaultdict(list)
    for i, s in enumerate(dataset):
        groups[s.source_record].append(i)
    names = sorted(groups)
    train, test = [], []
    for k in rng.permutation(len(names)):
        members = groups[names[k]]
        # whole records go to whichever side keeps |train| closest to target
        if abs(len(train) + len(members) - target) <= abs(len(train) - target):
            train.extend(members)
        else:
            test.extend(members)
    return sorted(train), sorted(test)


def split(dataset: Dataset, config: SplitConfig = SplitConfig()) -> tuple[Dataset, Dataset]:
    """Seeded disjoint partition into (train, test).

    In record-disjoint mode whole records are assigned to one side, so the
    train size is only approximately ``train_fraction`` of the total.
    """
    if len(dataset) == 0:
        raise ValueError("cannot split an empty dataset")
    train, test = split_indices(dataset, config)
    return dataset.subset(train), dataset.subset(test)
