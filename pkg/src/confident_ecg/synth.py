"""Synthetic single-lead ECG with per-category beat morphologies and label corruption.

Each wave (P, Q, R, S, T) is a Gaussian bump with an amplitude in mV, a
centre relative to the R peak and a width, all in seconds. Every category has
its own wave set and RR pattern:

* N: textbook sinus beat, regular RR.
* S: premature narrow beat with an early, inverted P wave and a compensatory pause.
* V: premature wide QRS without a P wave and with a discordant T wave.
* A: no P wave, fibrillatory baseline oscillation, irregular RR.
* Q: randomly drawn waves.

This is a deterministic test bed, not a physiological model.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .signals import (
    BeatAnnotation,
    Dataset,
    EcgRecord,
    LabeledSegment,
    NUM_CATEGORIES,
    RhythmCategory,
)

# (amplitude mV, centre s, width s)
_WAVES = {
    RhythmCategory.N: [(0.15, -0.16, 0.020), (-0.12, -0.025, 0.007), (1.0, 0.0, 0.009),
                       (-0.25, 0.025, 0.008), (0.30, 0.24, 0.040)],
    RhythmCategory.S: [(-0.13, -0.10, 0.014), (-0.12, -0.025, 0.007), (1.0, 0.0, 0.009),
                       (-0.25, 0.025, 0.008), (0.25, 0.22, 0.040)],
    RhythmCategory.V: [(1.2, 0.0, 0.030), (-0.55, 0.065, 0.030), (-0.45, 0.29, 0.060)],
    RhythmCategory.A: [(-0.12, -0.025, 0.007), (1.0, 0.0, 0.009), (-0.25, 0.025, 0.008),
                       (0.28, 0.24, 0.040)],
}

# (preceding RR, following RR) as multiples of the sinus period
_RR = {
    RhythmCategory.N: (1.0, 1.0),
    RhythmCategory.S: (0.62, 1.25),
    RhythmCategory.V: (0.65, 1.35),
    RhythmCategory.Q: (1.0, 1.0),
}

_QRS_HALF_WIDTH_S = {RhythmCategory.V: 0.08}
_DEFAULT_QRS_HALF_WIDTH_S = 0.045


@dataclass(frozen=True)
class SynthConfig:
    sampling_rate_hz: float = 300.0
    beats_per_category: int = 100
    segment_length: int = 600
    noise_snr_db: float = 20.0
    label_corruption_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.label_corruption_rate < 1:
            raise ValueError("label_corruption_rate must lie in [0, 1)")
        if self.beats_per_category < 1:
            raise ValueError("beats_per_category must be >= 1")
        if self.sampling_rate_hz <= 0 or self.segment_length < 2:
            raise ValueError("invalid sampling rate or segment length")


@dataclass(frozen=True)
class SynthDataset:
    dataset: Dataset
    true_labels: np.ndarray
    corruption_mask: np.ndarray

    @property
    def given_labels(self) -> np.ndarray:
        return self.dataset.labels()

    def write_truth(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "true", "given", "corrupted_flag"])
            for i, (t, g, m) in enumerate(zip(self.true_labels, self.given_labels, self.corruption_mask)):
                writer.writerow([i, RhythmCategory(t).name, RhythmCategory(g).name, int(m)])


def _beat_waves(category: RhythmCategory, rng) -> list[tuple[float, float, float]]:
    if category == RhythmCategory.Q:
        n = rng.integers(3, 7)
        return [
            (rng.uniform(-1.0, 1.0), rng.uniform(-0.3, 0.3), rng.uniform(0.006, 0.06))
            for _ in range(n)
        ]
    waves = []
    for amp, centre, width in _WAVES[category]:
        waves.append(
            (
                amp * rng.uniform(0.85, 1.15),
                centre + rng.uniform(-0.01, 0.01),
                width * rng.uniform(0.85, 1.15),
            )
        )
    return waves


def _render(t, waves, r_time):
    out = np.zeros_like(t)
    for amp, centre, width in waves:
        out += amp * np.exp(-0.5 * ((t - r_time - centre) / width) ** 2)
    return out


def _fibrillation(t, rng):
    out = np.zeros_like(t)
    for _ in range(3):
        out += rng.uniform(0.02, 0.05) * np.sin(2 * np.pi * rng.uniform(4.0, 9.0) * t + rng.uniform(0, 2 * np.pi))
    return out


def _add_noise(clean, snr_db, rng):
    if not np.isfinite(snr_db):
        return clean
    power = np.mean(clean**2)
    sigma = np.sqrt(power / 10 ** (snr_db / 10))
    return clean + rng.normal(0.0, sigma, clean.shape)


def _neighbour_rr(category, period, rng):
    if category == RhythmCategory.A:
        return period * rng.uniform(0.45, 1.1), period * rng.uniform(0.45, 1.1)
    before, after = _RR[category]
    return period * before * rng.uniform(0.95, 1.05), period * after * rng.uniform(0.95, 1.05)


def synth_beat(category, config: SynthConfig = SynthConfig(), rng=None) -> np.ndarray:
    """One ``segment_length`` window whose central beat has ``category``.

    The neighbouring beats are sinus beats (fibrillating beats for ``A``)
    placed at category-specific RR intervals.
    """
    category = RhythmCategory.parse(category)
    rng = np.random.default_rng(config.seed) if rng is None else rng
    fs = config.sampling_rate_hz
    t = np.arange(config.segment_length) / fs
    duration = config.segment_length / fs
    period = 60.0 / rng.uniform(60, 90)
    r_time = duration * rng.uniform(0.4, 0.6)
    before, after = _neighbour_rr(category, period, rng)
    neighbour = RhythmCategory.A if category == RhythmCategory.A else RhythmCategory.N
    signal = _render(t, _beat_waves(category, rng), r_time)
    # neighbours out to the segment edges
    for direction, first_gap in ((-1, before), (1, after)):
        r = r_time + direction * first_gap
        while -0.5 < r < duration + 0.5:
            signal += _render(t, _beat_waves(neighbour, rng), r)
            gap = _neighbour_rr(neighbour, period, rng)[0]
            r += direction * gap
    if category == RhythmCategory.A:
        signal += _fibrillation(t, rng)
    signal *= rng.uniform(0.8, 1.2)
    signal += 0.1 * np.sin(2 * np.pi * rng.uniform(0.15, 0.5) * t + rng.uniform(0, 2 * np.pi))
    return _add_noise(signal, config.noise_snr_db, rng)


def synth_dataset(config: SynthConfig = SynthConfig(), rng=None) -> SynthDataset:
    """``beats_per_category`` segments per category (category-major order),
    labels corrupted at ``config.label_corruption_rate``."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    segments = []
    for cat in RhythmCategory:
        for _ in range(config.beats_per_category):
            segments.append(LabeledSegment(synth_beat(cat, config, rng), cat, f"synth-{cat.name}"))
    clean = Dataset(tuple(segments), config.segment_length)
    return corrupt_labels(clean, config.label_corruption_rate, rng)


def corrupt_labels(dataset: Dataset, rate: float, rng=None) -> SynthDataset:
    """Independently replace each label, with probability ``rate``, by a
    uniformly drawn different category."""
    if not 0 <= rate < 1:
        raise ValueError("rate must lie in [0, 1)")
    rng = np.random.default_rng(0) if rng is None else rng
    true = dataset.labels()
    flip = rng.random(len(true)) < rate
    # offset in 1..K-1 guarantees a different category
    offset = rng.integers(1, NUM_CATEGORIES, size=len(true))
    given = np.where(flip, (true + offset) % NUM_CATEGORIES, true)
    segments = tuple(
        s.with_category(int(g)) if f else s for s, g, f in zip(dataset.segments, given, flip)
    )
    return SynthDataset(Dataset(segments, dataset.segment_length), true, given != true)


def synth_record(
    record_id: str,
    categories,
    config: SynthConfig = SynthConfig(),
    rng=None,
) -> EcgRecord:
    """A continuous annotated record with one beat per entry of ``categories``.

    Each annotation spans midpoint to midpoint between neighbouring R peaks;
    its QRS interval is centred on the R peak.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    cats = [RhythmCategory.parse(c) for c in categories]
    fs = config.sampling_rate_hz
    period = 60.0 / rng.uniform(60, 90)
    r_times = []
    r = 1.5 * period
    for i, cat in enumerate(cats):
        if i:
            gap = _neighbour_rr(cat, period, rng)[0]
            if cats[i - 1] in _RR and cats[i - 1] != RhythmCategory.N:
                gap = max(gap, period * _RR[cats[i - 1]][1] * rng.uniform(0.95, 1.05))
            r += gap
        r_times.append(r)
    duration = r + 1.5 * period
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    signal = np.zeros(n)
    for cat, rt in zip(cats, r_times):
        signal += _render(t, _beat_waves(cat, rng), rt)
        if cat == RhythmCategory.A:
            lo, hi = int((rt - 0.5 * period) * fs), int((rt + 0.5 * period) * fs)
            sl = slice(max(lo, 0), min(hi, n))
            signal[sl] += _fibrillation(t[sl], rng)
    signal += 0.1 * np.sin(2 * np.pi * rng.uniform(0.15, 0.5) * t + rng.uniform(0, 2 * np.pi))
    signal = _add_noise(signal, config.noise_snr_db, rng)
    r_idx = [int(round(rt * fs)) for rt in r_times]
    bounds = [0] + [(a + b) // 2 for a, b in zip(r_idx, r_idx[1:])] + [n]
    annotations = []
    for i, (cat, ri) in enumerate(zip(cats, r_idx)):
        half = int(round(_QRS_HALF_WIDTH_S.get(cat, _DEFAULT_QRS_HALF_WIDTH_S) * fs))
        start, end = bounds[i], bounds[i + 1]
        q0, q1 = max(ri - half, start), min(ri + half, end)
        annotations.append(BeatAnnotation(start, end, cat, q0, q1))
    return EcgRecord(record_id, fs, signal, tuple(annotations))


def synth_records(config: SynthConfig = SynthConfig(), beats_per_record: int = 20, rng=None) -> list[EcgRecord]:
    """Records covering ``beats_per_category`` beats of each category in shuffled order."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    cats = np.repeat(np.arange(NUM_CATEGORIES), config.beats_per_category)
    rng.shuffle(cats)
    return [
        synth_record(f"synth{i // beats_per_record:04d}", cats[i : i + beats_per_record], config, rng)
        for i in range(0, len(cats), beats_per_record)
    ]
