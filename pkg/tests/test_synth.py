import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from confident_ecg.preprocess import WindowConfig, slide_windows
from confident_ecg.signals import NUM_CATEGORIES, Dataset, RhythmCategory, load_record, save_record
from confident_ecg.synth import (
    SynthConfig,
    corrupt_labels,
    synth_beat,
    synth_dataset,
    synth_record,
    synth_records,
)

NOISELESS = SynthConfig(noise_snr_db=float("inf"))


class TestBeat:
    def test_seeded_repeat(self):
        a = synth_beat("N", NOISELESS, np.random.default_rng(3))
        b = synth_beat("N", NOISELESS, np.random.default_rng(3))
        assert a.shape == (600,)
        np.testing.assert_array_equal(a, b)

    def test_categories_differ_under_same_seed(self):
        beats = [synth_beat(c, NOISELESS, np.random.default_rng(0)) for c in RhythmCategory]
        for i in range(len(beats)):
            for j in range(i + 1, len(beats)):
                assert not np.allclose(beats[i], beats[j])

    def test_noise_level(self):
        rng_a, rng_b = np.random.default_rng(9), np.random.default_rng(9)
        clean = synth_beat("V", NOISELESS, rng_a)
        noisy = synth_beat("V", SynthConfig(noise_snr_db=10.0), rng_b)
        snr = 10 * np.log10(np.mean(clean**2) / np.mean((noisy - clean) ** 2))
        assert 9.0 < snr < 11.0

    def test_ventricular_qrs_is_wider(self):
        # width of the central R deflection above half its height
        def width(x):
            c = np.argmax(np.abs(x[200:400])) + 200
            return np.count_nonzero(np.abs(x[c - 40 : c + 40]) > 0.5 * abs(x[c]))

        rng = np.random.default_rng(1)
        v = np.mean([width(synth_beat("V", NOISELESS, rng)) for _ in range(10)])
        n = np.mean([width(synth_beat("N", NOISELESS, rng)) for _ in range(10)])
        assert v > 2 * n


class TestDataset:
    def test_shape_and_order(self):
        sd = synth_dataset(SynthConfig(beats_per_category=3, segment_length=200, sampling_rate_hz=100))
        assert len(sd.dataset) == 15
        assert sd.dataset.segment_length == 200
        assert sd.true_labels.tolist() == [c for c in range(5) for _ in range(3)]
        assert not sd.corruption_mask.any()

    def test_determinism(self):
        cfg = SynthConfig(beats_per_category=4, label_corruption_rate=0.5, seed=11)
        a, b = synth_dataset(cfg), synth_dataset(cfg)
        np.testing.assert_array_equal(a.dataset.features(), b.dataset.features())
        np.testing.assert_array_equal(a.given_labels, b.given_labels)

    def test_truth_csv(self, tmp_path):
        sd = synth_dataset(SynthConfig(beats_per_category=2, label_corruption_rate=0.5, seed=1))
        sd.write_truth(tmp_path / "truth.csv")
        lines = (tmp_path / "truth.csv").read_text().splitlines()
        assert lines[0] == "index,true,given,corrupted_flag"
        assert len(lines) == 11
        for line, t, g, m in zip(lines[1:], sd.true_labels, sd.given_labels, sd.corruption_mask):
            _, true, given, flag = line.split(",")
            assert (true, given, int(flag)) == (RhythmCategory(t).name, RhythmCategory(g).name, int(m))

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            SynthConfig(label_corruption_rate=1.0)
        with pytest.raises(ValueError):
            SynthConfig(beats_per_category=0)


def _labels_only(n, seed=0):
    labels = np.random.default_rng(seed).integers(0, NUM_CATEGORIES, n)
    return Dataset.from_arrays(np.zeros((n, 2)), labels)


class TestCorruption:
    def test_rate_zero(self):
        sd = corrupt_labels(_labels_only(500), 0.0, np.random.default_rng(0))
        assert not sd.corruption_mask.any()
        np.testing.assert_array_equal(sd.given_labels, sd.true_labels)

    def test_concentration(self):
        sd = corrupt_labels(_labels_only(10_000), 0.3, np.random.default_rng(7))
        assert 0.28 <= sd.corruption_mask.mean() <= 0.32

    def test_flipped_labels_are_uniform_over_others(self):
        ds = Dataset.from_arrays(np.zeros((20_000, 2)), np.zeros(20_000, int))
        sd = corrupt_labels(ds, 0.5, np.random.default_rng(2))
        flipped = sd.given_labels[sd.corruption_mask]
        freq = np.bincount(flipped, minlength=5) / len(flipped)
        assert freq[0] == 0
        np.testing.assert_allclose(freq[1:], 0.25, atol=0.02)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 300), rate=st.floats(0, 0.99), seed=st.integers(0, 2**32 - 1))
    def test_mask_matches_label_mismatch(self, n, rate, seed):
        sd = corrupt_labels(_labels_only(n, seed), rate, np.random.default_rng(seed))
        np.testing.assert_array_equal(sd.corruption_mask, sd.given_labels != sd.true_labels)
        # the segments themselves are untouched
        assert sd.dataset.features().shape == (n, 1, 2)


class TestRecords:
    def test_annotations_cover_beats(self):
        cats = ["N", "V", "N", "S", "A", "Q", "N"]
        rec = synth_record("r", cats, SynthConfig(seed=4))
        assert [a.category.name for a in rec.annotations] == cats
        assert rec.annotations[0].start_index == 0 and rec.annotations[-1].end_index == len(rec)
        for a, b in zip(rec.annotations, rec.annotations[1:]):
            assert a.end_index == b.start_index
        assert rec.annotations[1].qrs_length > rec.annotations[0].qrs_length

    def test_round_trip_and_windowing(self, tmp_path):
        rec = synth_record("r", ["N", "V", "N"], SynthConfig(seed=1))
        save_record(rec, tmp_path / "r")
        assert load_record(tmp_path / "r") == rec
        wins = slide_windows(rec, rec.annotations[1], WindowConfig(300, 20))
        assert wins and all(len(w.samples) == 300 for w in wins)

    def test_records_cover_requested_beats(self):
        recs = synth_records(SynthConfig(beats_per_category=6, seed=2), beats_per_record=7)
        cats = [a.category for r in recs for a in r.annotations]
        assert len(recs) == 5
        assert all(cats.count(c) == 6 for c in RhythmCategory)
        assert len({r.record_id for r in recs}) == len(recs)
