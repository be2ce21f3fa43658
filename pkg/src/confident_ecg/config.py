"""Flat ``section.key = value`` run configuration.

Every tunable of every module lives under one dotted key, e.g.
``train.batch_size`` or ``wavelet.zero_levels``. Values resolve in three
layers: built-in defaults, then an optional config file, then command-line
overrides. The fully resolved mapping is what a run's manifest records, and
feeding a manifest back in as a config file reproduces the run.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .confident import ConfidenceConfig
from .nn import BackboneConfig, PlainCNNConfig
from .optim import TrainConfig
from .preprocess import SplitConfig, WindowConfig
from .synth import SynthConfig
from .wavelet import WaveletSpec


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


def _fields(cls, skip=("seed",)) -> dict[str, Any]:
    return {f.name: f.default for f in dataclasses.fields(cls) if f.name not in skip}


# section -> (dataclass or None, defaults). Root-level ``seed`` drives every
# random stream, so per-module seed fields are not exposed.
SECTIONS: dict[str, tuple[type | None, dict[str, Any]]] = {
    "synth": (SynthConfig, {**_fields(SynthConfig), "test_beats_per_category": 100, "kind": "segments", "beats_per_record": 20}),
    "window": (WindowConfig, _fields(WindowConfig)),
    "wavelet": (WaveletSpec, {**_fields(WaveletSpec), "zero_levels": (1, 2), "enabled": True}),
    "split": (SplitConfig, {**_fields(SplitConfig), "enabled": False, "balance_per_class": 0}),
    "backbone": (BackboneConfig, _fields(BackboneConfig)),
    "cnn": (PlainCNNConfig, _fields(PlainCNNConfig)),
    "train": (TrainConfig, {**_fields(TrainConfig), "arch": "resnet", "dtype": "float64", "checkpoint_every": 0}),
    "stage1": (TrainConfig, _fields(TrainConfig)),
    "confidence": (None, {k: v for k, v in _fields(ConfidenceConfig).items() if k in ("threshold", "score_rule", "strict")}),
    "sweep": (None, {"thresholds": "0.3..0.99"}),
    "paths": (None, {"train": "", "test": "", "input": "", "model": ""}),
}
ROOT_DEFAULTS = {"seed": 0}
# keys a manifest carries for the record that are not tunables
RESERVED = ("command", "threads")


def default_values() -> dict[str, Any]:
    values = dict(ROOT_DEFAULTS)
    for section, (_, defaults) in SECTIONS.items():
        for k, v in defaults.items():
            values[f"{section}.{k}"] = v
    return values


def _coerce(key: str, raw: str, default: Any) -> Any:
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(p) for p in text.replace(" ", "").split(",") if p) if text else ()
    except ValueError:
        kind = type(default).__name__
        raise ConfigError(f"invalid value {raw!r} for {key} (expected {kind})", key) from None
    return text


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_assignments(lines: Iterable[str], source: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; blank lines are skipped."""
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_config_file(path) -> dict[str, str]:
    path = Path(path)
    return parse_assignments(path.read_text(encoding="utf-8").splitlines(), str(path))


class RunConfig:
    """Resolved configuration: defaults < file < overrides."""

    def __init__(self, values: dict[str, Any] | None = None):
        self.values = default_values() if values is None else values

    @classmethod
    def resolve(cls, file_values: dict[str, str] | None = None, overrides: dict[str, str] | None = None) -> "RunConfig":
        values = default_values()
        for layer in (file_values or {}, overrides or {}):
            for key, raw in layer.items():
                if key in RESERVED:
                    continue
                if key not in values:
                    raise ConfigError(f"unknown config key {key!r}", key)
                values[key] = _coerce(key, raw, values[key])
        cfg = cls(values)
        cfg.validate()
        return cfg

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def section(self, name: str) -> dict[str, Any]:
        prefix = f"{name}."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def build(self, name: str, **extra):
        """Instantiate ``name``'s dataclass from its keys (unknown extras ignored)."""
        cls = SECTIONS[name][0]
        allowed = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: v for k, v in self.section(name).items() if k in allowed}
        kwargs.update(extra)
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            changed = [k for k, v in self.section(name).items() if v != SECTIONS[name][1].get(k)]
            key = f"{name}.{changed[0]}" if len(changed) == 1 else None
            where = key or f"section {name!r}" + (f" (changed keys: {', '.join(changed)})" if changed else "")
            raise ConfigError(f"invalid config in {where}: {exc}", key) from None

    def confidence(self) -> ConfidenceConfig:
        c = self.section("confidence")
        try:
            return ConfidenceConfig(
                threshold=c["threshold"],
                score_rule=c["score_rule"],
                strict=c["strict"],
                stage1_arch=self.build("cnn"),
                stage1_train=self.build("stage1"),
                stage2_arch=self.build("backbone"),
                stage2_train=self.build("train"),
                dtype=self["train.dtype"],
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config in section 'confidence': {exc}") from None

    def validate(self) -> None:
        for name, (cls, _) in SECTIONS.items():
            if cls is not None:
                self.build(name)
        self.confidence()
        if self["train.arch"] not in ("resnet", "plain_cnn"):
            raise ConfigError(f"train.arch must be 'resnet' or 'plain_cnn', got {self['train.arch']!r}", "train.arch")
        if self["train.dtype"] not in ("float32", "float64"):
            raise ConfigError("train.dtype must be float32 or float64", "train.dtype")
        if self["synth.kind"] not in ("segments", "records"):
            raise ConfigError("synth.kind must be 'segments' or 'records'", "synth.kind")
        if self["train.checkpoint_every"] < 0:
            raise ConfigError("train.checkpoint_every must be >= 0", "train.checkpoint_every")
        levels = self["wavelet.levels"]
        bad = [z for z in self["wavelet.zero_levels"] if not 1 <= z <= levels]
        if bad:
            raise ConfigError(f"wavelet.zero_levels {bad} outside 1..{levels}", "wavelet.zero_levels")
        parse_thresholds(self["sweep.thresholds"])

    def manifest_lines(self, command: str, threads: int | None) -> list[str]:
        lines = [f"command = {command}", f"threads = {threads if threads is not None else 'unlimited'}"]
        lines += [f"{k} = {format_value(v)}" for k, v in sorted(self.values.items())]
        return lines


def parse_thresholds(text: str) -> list[float]:
    """Comma-separated values and/or ``lo..hi`` ranges.

    ``lo..hi`` steps by 0.1 from ``lo`` and always includes ``hi``, so
    ``0.3..0.99`` expands to 0.3, 0.4, ..., 0.9, 0.99. ``lo..hi:step`` sets
    the step explicitly. The result is sorted and de-duplicated.
    """
    out: list[float] = []
    for part in (p.strip() for p in str(text).split(",")):
        if not part:
            continue
        try:
            if ".." in part:
                rng, _, step_text = part.partition(":")
                lo_text, hi_text = rng.split("..", 1)
                lo, hi = float(lo_text), float(hi_text)
                step = float(step_text) if step_text else 0.1
                if step <= 0 or hi < lo:
                    raise ValueError(part)
                n = int(math.floor((hi - lo) / step + 1e-9))
                out += [round(lo + i * step, 10) for i in range(n + 1)]
                out.append(hi)
            else:
                out.append(float(part))
        except ValueError:
            raise ConfigError(f"invalid threshold list {text!r}", "sweep.thresholds") from None
    values = sorted(set(out))
    if not values or any(not 0 < t <= 1 for t in values):
        raise ConfigError(f"thresholds must lie in (0, 1], got {text!r}", "sweep.thresholds")
    return values


STREAMS = ("synth-train", "synth-test", "split", "model", "train", "pipeline")


def stream_seed(root: int, name: str) -> int:
    """Independent, stable integer seed for one named random stream."""
    children = np.random.SeedSequence(root).spawn(len(STREAMS))
    return int(children[STREAMS.index(name)].generate_state(1)[0])
