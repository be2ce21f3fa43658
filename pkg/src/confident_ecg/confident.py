"""Confidence-filtered two-stage training.

Stage 1 trains a plain CNN on the raw, possibly mislabelled, training set.
Its softmax output scores every training segment; segments scoring at least
the threshold are treated as clean. Stage 2 trains the residual network on
the clean subset only.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .evaluation import ConfusionMatrix, Metrics, evaluate
from .nn import BackboneConfig, Network, PlainCNNConfig
from .optim import TrainConfig, TrainReport, train
from .signals import NUM_CATEGORIES, Dataset, RhythmCategory

log = logging.getLogger(__name__)

SCORE_RULES = ("label_probability", "max_probability")
HISTOGRAM_BINS = 20


class ThresholdTooHighError(ValueError):
    def __init__(self, threshold: float, max_score: float):
        super().__init__(
            f"threshold too high: {threshold} keeps no segment (max observed score {max_score:.6g})"
        )
        self.threshold = threshold
        self.max_score = max_score


@dataclass(frozen=True)
class ConfidenceConfig:
    threshold: float = 0.8
    score_rule: str = "label_probability"
    strict: bool = False
    stage1_arch: PlainCNNConfig = PlainCNNConfig()
    stage1_train: TrainConfig = TrainConfig()
    stage2_arch: BackboneConfig = BackboneConfig()
    stage2_train: TrainConfig = TrainConfig()
    dtype: str = "float64"

    def __post_init__(self):
        if not 0 <= self.threshold <= 1:
            raise ValueError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.score_rule not in SCORE_RULES:
            raise ValueError(f"score_rule must be one of {SCORE_RULES}")

    def describe(self) -> dict:
        return {
            "stage1": {"architecture": "plain_cnn", **asdict(self.stage1_arch)},
            "stage2": {"architecture": "resnet", **asdict(self.stage2_arch)},
        }


@dataclass
class FilterReport:
    threshold: float
    kept: np.ndarray  # per category, by given label
    dropped: np.ndarray
    histogram: np.ndarray  # counts over 20 equal bins of [0, 1]
    kept_indices: np.ndarray
    dropped_indices: np.ndarray

    @property
    def total(self) -> int:
        return int(self.kept.sum() + self.dropped.sum())

    @property
    def kept_fraction(self) -> float:
        return float(self.kept.sum() / self.total) if self.total else 0.0

    def text(self) -> str:
        lines = [f"threshold: {self.threshold}", f"kept: {int(self.kept.sum())} / {self.total}"]
        lines.append("category  kept  dropped")
        for cat in RhythmCategory:
            lines.append(f"{cat.name:<9} {int(self.kept[cat]):<5} {int(self.dropped[cat])}")
        lines.append("score histogram (bin_start count):")
        for i, c in enumerate(self.histogram):
            lines.append(f"  {i / HISTOGRAM_BINS:.2f} {int(c)}")
        return "\n".join(lines)


def confidence_scores(model: Network, dataset: Dataset, rule: str = "label_probability", batch_size: int = 512) -> np.ndarray:
    """Per-segment confidence from the model's eval-mode softmax.

    ``label_probability`` scores the probability of each segment's given label;
    ``max_probability`` scores the largest class probability.
    """
    if rule not in SCORE_RULES:
        raise ValueError(f"unknown score rule {rule!r}")
    if len(dataset) == 0:
        return np.zeros(0)
    proba = model.predict_proba(dataset.features(), batch_size)
    if rule == "max_probability":
        return proba.max(axis=1)
    return proba[np.arange(len(dataset)), dataset.labels()]


def filter_clean(dataset: Dataset, scores, threshold: float, strict: bool = False) -> tuple[Dataset, FilterReport]:
    """Keep segments with ``score >= threshold`` (``>`` when ``strict``), in order.

    Raises:
        ThresholdTooHighError: nothing survives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(dataset):
        raise ValueError(f"{len(scores)} scores for {len(dataset)} segments")
    keep = scores > threshold if strict else scores >= threshold
    labels = dataset.labels()
    kept_idx = np.flatnonzero(keep)
    dropped_idx = np.flatnonzero(~keep)
    report = FilterReport(
        threshold=threshold,
        kept=np.bincount(labels[keep], minlength=NUM_CATEGORIES),
        dropped=np.bincount(labels[~keep], minlength=NUM_CATEGORIES),
        histogram=np.histogram(np.clip(scores, 0, 1), bins=HISTOGRAM_BINS, range=(0, 1))[0],
        kept_indices=kept_idx,
        dropped_indices=dropped_idx,
    )
    if len(kept_idx) == 0:
        raise ThresholdTooHighError(threshold, float(scores.max()) if len(scores) else float("nan"))
    return dataset.subset(kept_idx.tolist()), report


@dataclass
class StageOne:
    """A trained first-stage model with its validation carve-out and scores."""

    model: Network
    report: TrainReport
    fit_indices: np.ndarray
    val_indices: np.ndarray
    scores: np.ndarray  # over the whole raw training set
    test_metrics: Metrics | None = None
    test_confusion: ConfusionMatrix | None = None


@dataclass
class PipelineReport:
    threshold: float
    architectures: dict
    stage1: TrainReport
    stage2: TrainReport
    filter: FilterReport
    stage1_test: Metrics | None
    stage2_test: Metrics | None
    stage2_confusion: ConfusionMatrix | None = None

    @property
    def accuracy(self) -> float:
        return self.stage2_test.accuracy if self.stage2_test else float("nan")


def _seeds(seed: int) -> tuple[int, int, int, int]:
    children = np.random.SeedSequence(seed).spawn(4)
    return tuple(int(c.generate_state(1)[0]) for c in children)


def _validation_carve(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(fraction * n)) if n > 1 else 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _train_network(model, dataset, fit_idx, val_idx, config: TrainConfig, seed: int):
    x = dataset.features()
    y = dataset.labels()
    return train(
        model,
        x[fit_idx],
        y[fit_idx],
        x[val_idx] if len(val_idx) else None,
        y[val_idx] if len(val_idx) else None,
        config,
        np.random.default_rng(seed),
    )


def train_stage_one(raw_train: Dataset, config: ConfidenceConfig = ConfidenceConfig(), seed: int = 0, test: Dataset | None = None) -> StageOne:
    if len(raw_train) == 0:
        raise ValueError("empty training set")
    split_seed, s1_seed, _, _ = _seeds(seed)
    fit_idx, val_idx = _validation_carve(len(raw_train), config.stage1_train.validation_fraction, split_seed)
    model = Network.create(config.stage1_arch, s1_seed, np.dtype(config.dtype))
    model, report = _train_network(model, raw_train, fit_idx, val_idx, config.stage1_train, s1_seed + 1)
    scores = confidence_scores(model, raw_train, config.score_rule)
    result = StageOne(model, report, fit_idx, val_idx, scores)
    if test is not None and len(test):
        result.test_confusion, result.test_metrics = evaluate(model.predict(test.features()), test.labels())
    return result


def train_stage_two(
    raw_train: Dataset,
    test: Dataset | None,
    stage1: StageOne,
    config: ConfidenceConfig = ConfidenceConfig(),
    seed: int = 0,
    threshold: float | None = None,
) -> tuple[Network, PipelineReport]:
    threshold = config.threshold if threshold is None else threshold
    _, _, s2_seed, _ = _seeds(seed)
    _, freport = filter_clean(raw_train, stage1.scores, threshold, config.strict)
    kept = np.zeros(len(raw_train), dtype=bool)
    kept[freport.kept_indices] = True
    # the clean subset inherits stage 1's fit/validation partition
    fit_idx = stage1.fit_indices[kept[stage1.fit_indices]]
    val_idx = stage1.val_indices[kept[stage1.val_indices]]
    if len(fit_idx) == 0:
        raise ThresholdTooHighError(threshold, float(stage1.scores.max()))
    model = Network.create(config.stage2_arch, s2_seed, np.dtype(config.dtype))
    model, s2_report = _train_network(model, raw_train, fit_idx, val_idx, config.stage2_train, s2_seed + 1)
    s2_test = cm = None
    if test is not None and len(test):
        cm, s2_test = evaluate(model.predict(test.features()), test.labels())
    report = PipelineReport(
        threshold=threshold,
        architectures=config.describe(),
        stage1=stage1.report,
        stage2=s2_report,
        filter=freport,
        stage1_test=stage1.test_metrics,
        stage2_test=s2_test,
        stage2_confusion=cm,
    )
    return model, report


def confident_pipeline(
    raw_train: Dataset,
    test: Dataset | None = None,
    config: ConfidenceConfig = ConfidenceConfig(),
    seed: int = 0,
    stage1: StageOne | None = None,
) -> tuple[Network, PipelineReport]:
    """Stage-1 CNN on raw data, confidence filtering, stage-2 ResNet on the clean subset.

    Args:
        raw_train: training segments with their (possibly wrong) labels.
        test: evaluation segments; both stages are scored on it when given.
        seed: root seed; the validation carve-out and both models derive
            their seeds from it.
        stage1: reuse an already trained first stage (must come from the same
            ``raw_train``, ``config`` and ``seed``).
    """
    if stage1 is None:
        stage1 = train_stage_one(raw_train, config, seed, test)
    return train_stage_two(raw_train, test, stage1, config, seed)


@dataclass
class SweepRow:
    threshold: float
    accuracy: float | None
    kept_fraction: float | None
    stage1_accuracy: float | None
    error: str | None = None


SWEEP_COLUMNS = ("threshold", "accuracy", "kept_fraction", "stage1_accuracy")


def threshold_sweep(
    raw_train: Dataset,
    test: Dataset,
    thresholds: Sequence[float],
    config: ConfidenceConfig = ConfidenceConfig(),
    seed: int = 0,
    stage1: StageOne | None = None,
) -> list[SweepRow]:
    """One pipeline run per threshold, sharing a single stage-1 model.

    Since every seed is derived from ``seed``, each row equals a direct
    :func:`confident_pipeline` run at that threshold. Failing thresholds
    yield rows with ``error`` set.
    """
    if not len(thresholds):
        raise ValueError("no thresholds given")
    for t in thresholds:
        if not 0 < t <= 1:
            raise ValueError(f"sweep thresholds must lie in (0, 1], got {t}")
    if stage1 is None:
        stage1 = train_stage_one(raw_train, config, seed, test)
    s1_acc = stage1.test_metrics.accuracy if stage1.test_metrics else None
    rows = []
    for t in thresholds:
        try:
            _, rep = train_stage_two(raw_train, test, stage1, config, seed, threshold=t)
        except (ValueError, FloatingPointError) as exc:
            log.warning("threshold %s failed: %s", t, exc)
            rows.append(SweepRow(t, None, None, s1_acc, str(exc)))
            continue
        rows.append(SweepRow(t, rep.accuracy, rep.filter.kept_fraction, s1_acc))
        log.info("threshold %.2f accuracy %.4f kept %.3f", t, rep.accuracy, rep.filter.kept_fraction)
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    """Successful rows only; failures are reported separately."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for r in rows:
            if r.error is None:
                writer.writerow([repr(r.threshold), repr(r.accuracy), repr(r.kept_fraction), repr(r.stage1_accuracy)])
