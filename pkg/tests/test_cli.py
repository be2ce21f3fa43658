from pathlib import Path

import pytest

from confident_ecg.cli import EXIT_DATA, EXIT_DIVERGENCE, EXIT_IO, EXIT_OK, EXIT_USAGE, run
from confident_ecg.config import ConfigError, RunConfig, parse_thresholds, read_config_file

SMALL = """\
# tiny networks so every command finishes in about a second
synth.sampling_rate_hz = 150
synth.segment_length = 150
synth.beats_per_category = 12
synth.test_beats_per_category = 6
backbone.stem_filters = 4
backbone.filter_schedule = 4,4,8,8,8
cnn.filters = 4,4,8
train.epochs = 2
stage1.epochs = 2
train.batch_size = 16
stage1.batch_size = 16
"""


def manifest(path) -> dict:
    return read_config_file(Path(path) / "manifest.txt")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "small.cfg").write_text(SMALL)
    cfg = str(root / "small.cfg")
    assert run(["synth", "--out", str(root / "syn"), "--config", cfg, "--corruption", "0.3", "--threads", "1"]) == EXIT_OK
    for part in ("train", "test"):
        assert run(["preprocess", "--out", str(root / part), "--input", str(root / "syn" / part), "--config", cfg]) == EXIT_OK
    return root


def pipeline_args(ws, command, out, *extra):
    return [
        command, "--out", str(ws / out), "--config", str(ws / "small.cfg"),
        "--train", str(ws / "train" / "dataset"), "--test", str(ws / "test" / "dataset"), "--threads", "1", *extra,
    ]


class TestUsage:
    def test_no_arguments(self, capsys):
        assert run([]) == EXIT_USAGE
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag(self, tmp_path, capsys):
        assert run(["synth", "--out", str(tmp_path), "--bogus", "1"]) == EXIT_USAGE
        assert "--bogus" in capsys.readouterr().err

    def test_unknown_config_key_is_named(self, tmp_path, capsys):
        assert run(["synth", "--out", str(tmp_path), "--set", "train.batchsize=3"]) == EXIT_USAGE
        assert "train.batchsize" in capsys.readouterr().err

    def test_bad_value_is_named(self, tmp_path, capsys):
        (tmp_path / "c.cfg").write_text("train.epochs = many\n")
        assert run(["synth", "--out", str(tmp_path / "o"), "--config", str(tmp_path / "c.cfg")]) == EXIT_USAGE
        assert "train.epochs" in capsys.readouterr().err

    def test_invalid_value_is_named(self, tmp_path, capsys):
        assert run(["synth", "--out", str(tmp_path), "--set", "backbone.kernel_size=4"]) == EXIT_USAGE
        assert "backbone.kernel_size" in capsys.readouterr().err

    def test_missing_required_input(self, tmp_path, capsys):
        assert run(["train", "--out", str(tmp_path)]) == EXIT_USAGE
        assert "--train" in capsys.readouterr().err

    def test_missing_file_is_io_error(self, tmp_path):
        assert run(["eval", "--out", str(tmp_path), "--model", str(tmp_path / "no.ckpt"), "--test", str(tmp_path)]) == EXIT_IO

    def test_corrupt_checkpoint_is_io_error(self, workspace, tmp_path):
        (tmp_path / "bad.ckpt").write_bytes(b"garbage")
        code = run(["eval", "--out", str(tmp_path / "o"), "--model", str(tmp_path / "bad.ckpt"), "--test", str(workspace / "test" / "dataset")])
        assert code == EXIT_IO


class TestConfig:
    def test_defaults_follow_the_published_settings(self):
        cfg = RunConfig.resolve()
        assert (cfg["window.window_size"], cfg["window.step"]) == (600, 20)
        assert cfg["wavelet.levels"] == 4 and cfg["wavelet.zero_levels"] == (1, 2)
        assert cfg["backbone.filter_schedule"] == (64, 64, 128, 128, 256)
        assert cfg["backbone.kernel_size"] == 3 and cfg["backbone.dropout_keep_train"] == 0.5
        assert (cfg["train.learning_rate"], cfg["train.epochs"], cfg["train.batch_size"]) == (0.002, 100, 128)
        assert cfg["confidence.threshold"] == 0.8

    def test_precedence(self, tmp_path):
        (tmp_path / "c.cfg").write_text("train.epochs = 7\ntrain.batch_size = 9\n")
        out = tmp_path / "o"
        assert run(["synth", "--out", str(out), "--config", str(tmp_path / "c.cfg"), "--set", "train.epochs=3",
                    "--set", "synth.beats_per_category=1", "--set", "synth.test_beats_per_category=1"]) == EXIT_OK
        m = manifest(out)
        assert m["train.epochs"] == "3"  # flag beats file
        assert m["train.batch_size"] == "9"  # file beats default
        assert m["train.learning_rate"] == "0.002"  # default

    def test_specific_flag_beats_set(self):
        from confident_ecg.cli import _build_parser, _overrides

        args = _build_parser().parse_args(["train", "--out", "x", "--set", "train.epochs=4", "--epochs", "6"])
        assert _overrides(args)["train.epochs"] == "6"

    def test_manifest_reproduces_config(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        base = ["synth", "--set", "synth.beats_per_category=1", "--set", "synth.test_beats_per_category=1", "--seed", "5"]
        assert run([*base, "--out", str(out1)]) == EXIT_OK
        assert run(["synth", "--out", str(out2), "--config", str(out1 / "manifest.txt")]) == EXIT_OK
        assert (out1 / "manifest.txt").read_bytes() == (out2 / "manifest.txt").read_bytes()
        assert (out1 / "train" / "segments.bin").read_bytes() == (out2 / "train" / "segments.bin").read_bytes()

    def test_manifest_for_other_command_is_rejected(self, tmp_path):
        (tmp_path / "m.txt").write_text("command = sweep\n")
        assert run(["synth", "--out", str(tmp_path / "o"), "--config", str(tmp_path / "m.txt")]) == EXIT_USAGE

    def test_config_syntax_error(self, tmp_path):
        (tmp_path / "c.cfg").write_text("just words\n")
        with pytest.raises(ConfigError, match="key = value"):
            read_config_file(tmp_path / "c.cfg")

    @pytest.mark.parametrize(
        "text, expected",
        [
            ("0.3..0.99", [0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99]),
            ("0.5,0.8", [0.5, 0.8]),
            ("0.2..0.6:0.2", [0.2, 0.4, 0.6]),
            ("0.9, 0.5..0.6", [0.5, 0.6, 0.9]),
        ],
    )
    def test_threshold_ranges(self, text, expected):
        assert parse_thresholds(text) == expected

    @pytest.mark.parametrize("text", ["", "0..0.5", "0.5..1.2", "a..b", "0.9..0.3"])
    def test_bad_threshold_ranges(self, text):
        with pytest.raises(ConfigError):
            parse_thresholds(text)


class TestCommands:
    def test_synth_layout(self, workspace):
        syn = workspace / "syn"
        for name in ("manifest.txt", "report.csv", "checkpoints", "figures-data", "train/truth.csv", "test/labels.csv"):
            assert (syn / name).exists(), name
        assert (syn / "report.csv").read_text().splitlines()[0] == "split,category,given_count,corrupted_true_count"

    def test_synth_records_then_preprocess(self, workspace, tmp_path):
        cfg = str(workspace / "small.cfg")
        assert run(["synth", "--out", str(tmp_path / "r"), "--config", cfg, "--kind", "records",
                    "--set", "window.window_size=150", "--set", "synth.beats_per_category=4"]) == EXIT_OK
        assert sorted(p.name for p in (tmp_path / "r" / "records").glob("*.hdr"))
        assert run(["preprocess", "--out", str(tmp_path / "p"), "--input", str(tmp_path / "r" / "records"),
                    "--config", cfg, "--set", "window.window_size=150", "--set", "split.enabled=true"]) == EXIT_OK
        rows = (tmp_path / "p" / "report.csv").read_text().splitlines()
        assert rows[0] == "part,category,count"
        assert any(r.startswith("train,") for r in rows) and any(r.startswith("test,") for r in rows)

    def test_denoise_archive(self, workspace, tmp_path):
        assert run(["denoise", "--out", str(tmp_path), "--input", str(workspace / "syn" / "test"),
                    "--config", str(workspace / "small.cfg")]) == EXIT_OK
        assert (tmp_path / "denoised" / "segments.bin").exists()
        assert (tmp_path / "figures-data" / "denoise_example.csv").exists()

    def test_train_and_eval(self, workspace):
        args = pipeline_args(workspace, "train", "tr", "--set", "train.checkpoint_every=1")
        assert run(args) == EXIT_OK
        ckpts = sorted(p.name for p in (workspace / "tr" / "checkpoints").iterdir())
        assert ckpts == ["best.ckpt", "epoch0001.ckpt", "epoch0002.ckpt", "final.ckpt"]
        assert run(["eval", "--out", str(workspace / "ev"), "--model", str(workspace / "tr" / "checkpoints" / "final.ckpt"),
                    "--test", str(workspace / "test" / "dataset")]) == EXIT_OK
        assert (workspace / "ev" / "report.csv").read_text().startswith("category,metric,value,support\nall,accuracy,")

    def test_confident_train_report(self, workspace):
        assert run(pipeline_args(workspace, "confident-train", "ct", "--threshold", "0.05")) == EXIT_OK
        report = dict(line.split(",", 1) for line in (workspace / "ct" / "report.csv").read_text().splitlines()[1:])
        assert {"stage1_accuracy", "stage2_accuracy", "kept_fraction", "dropped_corruption_precision"} <= set(report)
        assert (workspace / "ct" / "checkpoints" / "stage2.ckpt").exists()
        assert (workspace / "ct" / "filter_report.txt").read_text().startswith("threshold: 0.05")

    def test_sweep_one_row_per_threshold(self, workspace):
        assert run(pipeline_args(workspace, "sweep", "sw", "--thresholds", "0.01..0.03:0.01")) == EXIT_OK
        rows = (workspace / "sw" / "report.csv").read_text().splitlines()
        assert rows[0] == "threshold,accuracy,kept_fraction,stage1_accuracy"
        assert [r.split(",")[0] for r in rows[1:]] == ["0.01", "0.02", "0.03"]

    def test_threshold_keeping_nothing_is_data_error(self, workspace, capsys):
        assert run(pipeline_args(workspace, "confident-train", "ct1", "--threshold", "1.0")) == EXIT_DATA
        assert "threshold too high" in capsys.readouterr().err

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit_code(self, workspace, capsys):
        args = pipeline_args(workspace, "train", "div", "--set", "train.learning_rate=1e300", "--set", "train.dtype=float32")
        assert run(args) == EXIT_DIVERGENCE
        assert "divergence" in capsys.readouterr().err

    def test_repeat_is_byte_identical(self, workspace):
        for out in ("d1", "d2"):
            assert run(pipeline_args(workspace, "confident-train", out, "--threshold", "0.05", "--seed", "3")) == EXIT_OK
        a, b = workspace / "d1", workspace / "d2"
        files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        assert files
        for rel in files:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
