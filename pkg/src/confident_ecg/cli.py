"""Command-line entry point.

Subcommands: ``synth``, ``preprocess``, ``denoise``, ``train``,
``confident-train``, ``sweep`` and ``eval``. Every run writes into ``--out``::

    manifest.txt      fully resolved config (reusable with --config)
    report.csv        the command's main table
    checkpoints/      model files, when the command trains or loads one
    figures-data/     CSV series for external plotting

Exit codes: 0 success, 2 usage or config error, 3 I/O or file format error,
4 numerical divergence, 5 the data cannot support the request (for example
a confidence threshold that keeps nothing).
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_thresholds, read_config_file, stream_seed
from .confident import (
    ThresholdTooHighError,
    threshold_sweep,
    train_stage_one,
    train_stage_two,
    write_sweep_csv,
)
from .evaluation import evaluate
from .nn import CheckpointError, Network, load_checkpoint, save_checkpoint
from .optim import DivergenceError, train
from .preprocess import ClassBalanceError, balance_classes, prepare_segments, preprocess_records, split
from .signals import (
    CATEGORY_SYMBOLS,
    Dataset,
    RecordFormatError,
    RhythmCategory,
    category_counts,
    load_dataset,
    load_record,
    save_dataset,
    save_record,
)
from .synth import synth_dataset, synth_records
from .wavelet import SignalTooShortError, denoise

log = logging.getLogger("confident_ecg")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4
EXIT_DATA = 5

# command-line flag dest -> config key
FLAG_KEYS = {
    "seed": "seed",
    "input": "paths.input",
    "train_dir": "paths.train",
    "test_dir": "paths.test",
    "model": "paths.model",
    "beats_per_category": "synth.beats_per_category",
    "corruption": "synth.label_corruption_rate",
    "snr_db": "synth.noise_snr_db",
    "kind": "synth.kind",
    "epochs": "train.epochs",
    "stage1_epochs": "stage1.epochs",
    "arch": "train.arch",
    "threshold": "confidence.threshold",
    "thresholds": "sweep.thresholds",
    "balance": "split.balance_per_class",
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


class RunDir:
    def __init__(self, root):
        self.root = Path(root)
        self.checkpoints = self.root / "checkpoints"
        self.figures = self.root / "figures-data"
        for d in (self.root, self.checkpoints, self.figures):
            d.mkdir(parents=True, exist_ok=True)

    def write_manifest(self, cfg: RunConfig, command: str, threads) -> None:
        lines = ["# resolved configuration; pass this file to --config to repeat the run"]
        lines += cfg.manifest_lines(command, threads)
        (self.root / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    def write_csv(self, name: str, header, rows, figures: bool = False) -> Path:
        path = (self.figures if figures else self.root) / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        return path


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _require(cfg: RunConfig, key: str) -> Path:
    value = cfg[key]
    if not value:
        flag = {v: k for k, v in FLAG_KEYS.items()}[key].replace("_dir", "").replace("_", "-")
        raise UsageError(f"missing required input: --{flag} (config key {key})")
    path = Path(value)
    if not path.exists():
        raise FileNotFoundError(f"{key}: {path} does not exist")
    return path


def _dtype(cfg: RunConfig):
    return np.dtype(cfg["train.dtype"])


def _truth_mask(directory: Path, n: int):
    """Corruption flags from a synth ``truth.csv`` next to an archive, if present."""
    path = directory / "truth.csv"
    if not path.exists():
        return None
    with open(path, newline="", encoding="utf-8") as fh:
        flags = [int(row["corrupted_flag"]) for row in csv.DictReader(fh)]
    return np.array(flags, dtype=bool) if len(flags) == n else None


def _history_rows(report):
    return [[r.epoch, _fmt(r.loss), _fmt(r.train_acc), _fmt(r.val_acc), _fmt(r.lr)] for r in report.epochs]


HISTORY_HEADER = ["epoch", "loss", "train_acc", "val_acc", "lr"]


def _confusion_rows(cm):
    return [[sym, *(int(c) for c in row)] for sym, row in zip(CATEGORY_SYMBOLS, cm.counts)]


def _metric_rows(cm, m):
    rows = [["all", "accuracy", _fmt(m.accuracy), cm.total]]
    support = cm.counts.sum(axis=1)
    for k, sym in enumerate(CATEGORY_SYMBOLS):
        rows.append([sym, "precision", _fmt(m.precision[k]) if m.precision_defined[k] else "", int(support[k])])
        rows.append([sym, "recall", _fmt(m.recall[k]) if m.recall_defined[k] else "", int(support[k])])
    return rows


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, out: RunDir) -> None:
    train_cfg = cfg.build("synth", seed=stream_seed(cfg.seed, "synth-train"))
    if cfg["synth.kind"] == "records":
        records = synth_records(train_cfg, cfg["synth.beats_per_record"])
        rec_dir = out.root / "records"
        rec_dir.mkdir(exist_ok=True)
        rows = []
        for rec in records:
            save_record(rec, rec_dir / rec.record_id)
            counts = {c: 0 for c in RhythmCategory}
            for a in rec.annotations:
                counts[a.category] += 1
            rows.append([rec.record_id, len(rec), *(counts[c] for c in RhythmCategory)])
        out.write_csv("report.csv", ["record_id", "samples", *CATEGORY_SYMBOLS], rows)
        log.info("wrote %d records to %s", len(records), rec_dir)
        return
    test_cfg = cfg.build(
        "synth",
        seed=stream_seed(cfg.seed, "synth-test"),
        beats_per_category=cfg["synth.test_beats_per_category"],
        label_corruption_rate=0.0,
    )
    rows = []
    for name, sc in (("train", train_cfg), ("test", test_cfg)):
        sd = synth_dataset(sc)
        save_dataset(sd.dataset, out.root / name)
        sd.write_truth(out.root / name / "truth.csv")
        given = np.bincount(sd.given_labels, minlength=len(RhythmCategory))
        corrupted = np.bincount(sd.true_labels[sd.corruption_mask], minlength=len(RhythmCategory))
        rows += [[name, c.name, int(given[c]), int(corrupted[c])] for c in RhythmCategory]
        if name == "train":
            x = sd.dataset.features()[:, 0, :]
            firsts = [int(np.argmax(sd.true_labels == c)) for c in RhythmCategory]
            out.write_csv(
                "example_beats.csv",
                ["sample", *CATEGORY_SYMBOLS],
                [[t, *(_fmt(x[i, t]) for i in firsts)] for t in range(x.shape[1])],
                figures=True,
            )
    out.write_csv("report.csv", ["split", "category", "given_count", "corrupted_true_count"], rows)


def _wavelet(cfg: RunConfig):
    return cfg.build("wavelet") if cfg["wavelet.enabled"] else None


def cmd_preprocess(cfg: RunConfig, out: RunDir) -> None:
    src = _require(cfg, "paths.input")
    wavelet, zero = _wavelet(cfg), cfg["wavelet.zero_levels"]
    if (src / "segments.hdr").exists():
        raw = load_dataset(src)
        x, keep = prepare_segments(raw.features()[:, 0, :], wavelet, zero)
        kept = [s for s, k in zip(raw, keep) if k]
        dataset = Dataset(tuple(s.with_samples(row) for s, row in zip(kept, x)), raw.segment_length)
        if (src / "truth.csv").exists() and keep.all():
            (out.root / "dataset").mkdir(exist_ok=True)
            (out.root / "dataset" / "truth.csv").write_bytes((src / "truth.csv").read_bytes())
    else:
        headers = sorted(src.glob("*.hdr"))
        if not headers:
            raise FileNotFoundError(f"{src} holds neither a segment archive nor records")
        records = [load_record(h.with_suffix(".bin")) for h in headers]
        dataset = preprocess_records(records, cfg.build("window"), wavelet, zero)
    if cfg["split.balance_per_class"]:
        dataset = balance_classes(dataset, cfg["split.balance_per_class"], stream_seed(cfg.seed, "split"))
    save_dataset(dataset, out.root / "dataset")
    rows = [["dataset", c.name, n] for c, n in category_counts(dataset).items()]
    if cfg["split.enabled"]:
        parts = split(dataset, cfg.build("split", seed=stream_seed(cfg.seed, "split")))
        for name, part in zip(("train", "test"), parts):
            save_dataset(part, out.root / name)
            rows += [[name, c.name, n] for c, n in category_counts(part).items()]
    out.write_csv("report.csv", ["part", "category", "count"], rows)


def cmd_denoise(cfg: RunConfig, out: RunDir) -> None:
    src = _require(cfg, "paths.input")
    spec, zero = cfg.build("wavelet"), cfg["wavelet.zero_levels"]
    rows = []
    if (src / "segments.hdr").exists():
        ds = load_dataset(src)
        raw = ds.features()[:, 0, :]
        clean = denoise(raw, spec, zero) if len(raw) else raw
        save_dataset(Dataset(tuple(s.with_samples(r) for s, r in zip(ds, clean)), ds.segment_length), out.root / "denoised")
        pairs = [(f"segment{i}", r, c) for i, (r, c) in enumerate(zip(raw, clean))]
    else:
        paths = [src] if src.suffix in (".bin", ".hdr") else sorted(p.with_suffix(".bin") for p in src.glob("*.hdr"))
        if not paths:
            raise FileNotFoundError(f"{src} holds no records")
        pairs = []
        (out.root / "denoised").mkdir(exist_ok=True)
        for p in paths:
            rec = load_record(p)
            clean = denoise(rec.samples.astype(np.float64), spec, zero)
            save_record(type(rec)(rec.record_id, rec.sampling_rate_hz, clean, rec.annotations), out.root / "denoised" / p.stem)
            pairs.append((rec.record_id, rec.samples.astype(np.float64), clean))
    for name, r, c in pairs:
        energy = float(np.sum(r**2))
        removed = float(np.sum((r - c) ** 2)) / energy if energy else 0.0
        rows.append([name, len(r), _fmt(removed)])
    out.write_csv("report.csv", ["name", "samples", "removed_energy_fraction"], rows)
    if pairs:
        _, r, c = pairs[0]
        out.write_csv("denoise_example.csv", ["sample", "raw", "denoised"], [[t, _fmt(r[t]), _fmt(c[t])] for t in range(len(r))], figures=True)


def _evaluate_to(out: RunDir, model: Network, test: Dataset, prefix: str = ""):
    cm, m = evaluate(model.predict(test.features()), test.labels())
    out.write_csv(f"{prefix}confusion.csv", ["true\\pred", *CATEGORY_SYMBOLS], _confusion_rows(cm), figures=True)
    out.write_csv(f"{prefix}metrics.csv", ["category", "metric", "value", "support"], _metric_rows(cm, m), figures=True)
    log.info("%saccuracy %.4f", prefix, m.accuracy)
    return cm, m


def cmd_train(cfg: RunConfig, out: RunDir) -> None:
    data = load_dataset(_require(cfg, "paths.train"))
    test = load_dataset(_require(cfg, "paths.test")) if cfg["paths.test"] else None
    arch_cfg = cfg.build("backbone") if cfg["train.arch"] == "resnet" else cfg.build("cnn")
    tcfg = cfg.build("train")
    model = Network.create(arch_cfg, stream_seed(cfg.seed, "model"), _dtype(cfg))
    order = np.random.default_rng(stream_seed(cfg.seed, "split")).permutation(len(data))
    n_val = int(round(tcfg.validation_fraction * len(data))) if len(data) > 1 else 0
    fit, val = np.sort(order[n_val:]), np.sort(order[:n_val])
    x, y = data.features(), data.labels()
    every = cfg["train.checkpoint_every"]
    best = {"acc": -1.0}

    def on_epoch(record, m):
        if every and record.epoch % every == 0:
            save_checkpoint(m, out.checkpoints / f"epoch{record.epoch:04d}.ckpt")
        if record.val_acc > best["acc"]:
            best["acc"] = record.val_acc
            save_checkpoint(m, out.checkpoints / "best.ckpt")

    model, report = train(
        model, x[fit], y[fit], x[val] if n_val else None, y[val] if n_val else None,
        tcfg, np.random.default_rng(stream_seed(cfg.seed, "train")), on_epoch,
    )
    save_checkpoint(model, out.checkpoints / "final.ckpt")
    out.write_csv("report.csv", HISTORY_HEADER, _history_rows(report))
    out.write_csv("training_curve.csv", HISTORY_HEADER, _history_rows(report), figures=True)
    if test is not None and len(test):
        _evaluate_to(out, model, test)


def _pipeline_inputs(cfg: RunConfig):
    train_dir = _require(cfg, "paths.train")
    test_dir = _require(cfg, "paths.test")
    raw = load_dataset(train_dir)
    return raw, load_dataset(test_dir), _truth_mask(train_dir, len(raw))


def cmd_confident_train(cfg: RunConfig, out: RunDir) -> None:
    raw, test, mask = _pipeline_inputs(cfg)
    ccfg = cfg.confidence()
    seed = stream_seed(cfg.seed, "pipeline")
    stage1 = train_stage_one(raw, ccfg, seed, test)
    save_checkpoint(stage1.model, out.checkpoints / "stage1.ckpt")
    out.write_csv("stage1_training.csv", HISTORY_HEADER, _history_rows(stage1.report), figures=True)
    out.write_csv("scores.csv", ["index", "given", "score"], [[i, CATEGORY_SYMBOLS[g], _fmt(s)] for i, (g, s) in enumerate(zip(raw.labels(), stage1.scores))], figures=True)
    model, rep = train_stage_two(raw, test, stage1, ccfg, seed)
    save_checkpoint(model, out.checkpoints / "stage2.ckpt")
    out.write_csv("stage2_training.csv", HISTORY_HEADER, _history_rows(rep.stage2), figures=True)
    out.write_csv("confusion_stage2.csv", ["true\\pred", *CATEGORY_SYMBOLS], _confusion_rows(rep.stage2_confusion), figures=True)
    out.write_csv("metrics_stage2.csv", ["category", "metric", "value", "support"], _metric_rows(rep.stage2_confusion, rep.stage2_test), figures=True)
    f = rep.filter
    out.write_csv("score_histogram.csv", ["bin_start", "bin_end", "count"], [[_fmt(i / 20), _fmt((i + 1) / 20), int(c)] for i, c in enumerate(f.histogram)], figures=True)
    (out.root / "filter_report.txt").write_text(f.text() + "\n", encoding="utf-8")
    rows = [
        ["threshold", _fmt(rep.threshold)],
        ["stage1_architecture", "plain_cnn " + ",".join(map(str, ccfg.stage1_arch.filters))],
        ["stage2_architecture", "resnet " + ",".join(map(str, ccfg.stage2_arch.filter_schedule))],
        ["stage1_accuracy", _fmt(rep.stage1_test.accuracy)],
        ["stage2_accuracy", _fmt(rep.accuracy)],
        ["kept", int(f.kept.sum())],
        ["dropped", int(f.dropped.sum())],
        ["kept_fraction", _fmt(f.kept_fraction)],
    ]
    if mask is not None:
        d = f.dropped_indices
        rows.append(["dropped_corruption_precision", _fmt(float(mask[d].mean())) if len(d) else ""])
        rows.append(["corruption_rate", _fmt(float(mask.mean()))])
    out.write_csv("report.csv", ["quantity", "value"], rows)


def cmd_sweep(cfg: RunConfig, out: RunDir) -> None:
    raw, test, _ = _pipeline_inputs(cfg)
    ccfg = cfg.confidence()
    thresholds = parse_thresholds(cfg["sweep.thresholds"])
    seed = stream_seed(cfg.seed, "pipeline")
    stage1 = train_stage_one(raw, ccfg, seed, test)
    save_checkpoint(stage1.model, out.checkpoints / "stage1.ckpt")
    rows = threshold_sweep(raw, test, thresholds, ccfg, seed, stage1)
    write_sweep_csv(rows, out.root / "report.csv")
    write_sweep_csv(rows, out.figures / "sweep.csv")
    failures = [f"{r.threshold}: {r.error}" for r in rows if r.error]
    if failures:
        (out.root / "failures.txt").write_text("\n".join(failures) + "\n", encoding="utf-8")
        log.warning("%d of %d thresholds failed; see failures.txt", len(failures), len(rows))
    if all(r.error for r in rows):
        raise ThresholdTooHighError(max(thresholds), float(stage1.scores.max()))


def cmd_eval(cfg: RunConfig, out: RunDir) -> None:
    model, _ = load_checkpoint(_require(cfg, "paths.model"))
    test = load_dataset(_require(cfg, "paths.test"))
    cm, m = _evaluate_to(out, model, test)
    out.write_csv("report.csv", ["category", "metric", "value", "support"], _metric_rows(cm, m))


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic labelled dataset (train and clean test archives)"),
    "preprocess": (cmd_preprocess, "window, denoise and standardize records or a segment archive"),
    "denoise": (cmd_denoise, "wavelet-denoise records or a segment archive"),
    "train": (cmd_train, "train one network on an archive"),
    "confident-train": (cmd_confident_train, "two-stage confidence-filtered training"),
    "sweep": (cmd_sweep, "confidence threshold sweep sharing one stage-1 model"),
    "eval": (cmd_eval, "evaluate a checkpoint on an archive"),
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--config", help="flat 'section.key = value' config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--seed", help="root seed for every random stream")
    common.add_argument("--threads", type=int, help="cap BLAS threads; 1 gives the reproducible mode")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="confident-ecg", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    p = {name: sub.add_parser(name, parents=[common], help=text, description=text) for name, (_, text) in COMMANDS.items()}

    p["synth"].add_argument("--beats-per-category", dest="beats_per_category")
    p["synth"].add_argument("--corruption", help="fraction of training labels to flip")
    p["synth"].add_argument("--snr-db", dest="snr_db")
    p["synth"].add_argument("--kind", choices=("segments", "records"))
    for name in ("preprocess", "denoise"):
        p[name].add_argument("--input", help="record directory, single record or segment archive")
    p["preprocess"].add_argument("--balance", help="keep exactly this many segments per category")
    for name in ("train", "confident-train", "sweep"):
        p[name].add_argument("--train", dest="train_dir", help="training archive")
        p[name].add_argument("--test", dest="test_dir", help="test archive")
        p[name].add_argument("--epochs", help="epochs for the (stage-2) network")
    p["train"].add_argument("--arch", choices=("resnet", "plain_cnn"))
    for name in ("confident-train", "sweep"):
        p[name].add_argument("--stage1-epochs", dest="stage1_epochs")
    p["confident-train"].add_argument("--threshold")
    p["sweep"].add_argument("--thresholds", help="e.g. 0.3..0.99 or 0.5,0.8,0.9")
    p["eval"].add_argument("--model", help="checkpoint file")
    p["eval"].add_argument("--test", dest="test_dir", help="test archive")
    return parser


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            out[key] = str(value)
    return out


def _thread_limit(threads):
    if threads is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def run(argv=None) -> int:
    parser = _build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        print("confident-ecg: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    handler = COMMANDS[args.command][0]
    try:
        file_values = read_config_file(args.config) if args.config else {}
        if file_values.get("command", args.command) != args.command:
            raise ConfigError(f"config file was written for {file_values['command']!r}, not {args.command!r}", "command")
        cfg = RunConfig.resolve(file_values, _overrides(args))
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1", "threads")
        out = RunDir(args.out)
        out.write_manifest(cfg, args.command, args.threads)
        with _thread_limit(args.threads):
            handler(cfg, out)
    except (ConfigError, UsageError) as exc:
        print(f"confident-ecg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, FloatingPointError) as exc:
        print(f"confident-ecg {args.command}: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (RecordFormatError, CheckpointError, OSError) as exc:
        print(f"confident-ecg {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ThresholdTooHighError, ClassBalanceError, SignalTooShortError, ValueError) as exc:
        print(f"confident-ecg {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
