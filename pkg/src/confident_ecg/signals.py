"""ECG records, beat annotations, rhythm categories and their on-disk formats.

A record lives in three sibling files sharing one stem::

    <stem>.bin   little-endian float32 samples
    <stem>.hdr   UTF-8 ``key: value`` header (record_id, sampling_rate_hz,
                 sample_count, scale)
    <stem>.csv   optional annotation table
                 (record_id,start,end,qrs_start,qrs_end,category)
"""

from __future__ import annotations

import csv
import enum
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_SAMPLING_RATE_HZ = 300.0

ANNOTATION_COLUMNS = ("record_id", "start", "end", "qrs_start", "qrs_end", "category")


class RhythmCategory(enum.IntEnum):
    """AAMI EC57 beat classes, indexed in the order N, V, S, A, Q."""

    N = 0
    V = 1
    S = 2
    A = 3
    Q = 4

    @classmethod
    def parse(cls, value) -> "RhythmCategory":
        if isinstance(value, RhythmCategory):
            return value
        if isinstance(value, str):
            key = value.strip().upper()
            if key in cls.__members__:
                return cls[key]
            if key.isdigit():
                value = int(key)
        try:
            return cls(int(value))
        except (TypeError, ValueError):
            raise ValueError(f"unknown rhythm category {value!r}") from None


NUM_CATEGORIES = len(RhythmCategory)
CATEGORY_SYMBOLS = tuple(c.name for c in RhythmCategory)


class RecordFormatError(ValueError):
    """Base class for malformed record files."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class HeaderError(RecordFormatError):
    pass


class SampleCountMismatch(RecordFormatError):
    pass


class AnnotationRangeError(RecordFormatError):
    pass


@dataclass(frozen=True)
class BeatAnnotation:
    start_index: int
    end_index: int
    category: RhythmCategory
    qrs_start: int
    qrs_end: int

    def __post_init__(self):
        object.__setattr__(self, "category", RhythmCategory.parse(self.category))
        if not self.start_index < self.end_index:
            raise AnnotationRangeError(
                f"annotation start {self.start_index} must precede end {self.end_index}",
                field="start",
            )
        if not (self.start_index <= self.qrs_start < self.qrs_end <= self.end_index):
            raise AnnotationRangeError(
                f"qrs interval [{self.qrs_start}, {self.qrs_end}) not nested in "
                f"[{self.start_index}, {self.end_index})",
                field="qrs_start",
            )

    @property
    def qrs_length(self) -> int:
        return self.qrs_end - self.qrs_start


@dataclass(frozen=True)
class EcgRecord:
    """A single-lead trace in millivolts with its beat annotations.

    Samples are held as float32, the storage precision of the sample file,
    so that saving and reloading is an exact identity.
    """

    record_id: str
    sampling_rate_hz: float
    samples: np.ndarray
    annotations: tuple[BeatAnnotation, ...] = ()

    def __post_init__(self):
        if not self.sampling_rate_hz > 0:
            raise HeaderError(
                f"sampling rate must be positive, got {self.sampling_rate_hz}",
                field="sampling_rate_hz",
            )
        samples = np.array(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        anns = tuple(sorted(self.annotations, key=lambda a: (a.start_index, a.end_index)))
        for a in anns:
            if a.start_index < 0 or a.end_index > len(samples):
                raise AnnotationRangeError(
                    f"annotation out of range: [{a.start_index}, {a.end_index}) "
                    f"on record of length {len(samples)}",
                    field="end" if a.end_index > len(samples) else "start",
                )
        object.__setattr__(self, "annotations", anns)

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, EcgRecord):
            return NotImplemented
        return (
            self.record_id == other.record_id
            and self.sampling_rate_hz == other.sampling_rate_hz
            and np.array_equal(self.samples, other.samples)
            and self.annotations == other.annotations
        )

    __hash__ = None


class Provenance(str, enum.Enum):
    ORIGINAL = "original"
    WINDOW_AUGMENTED = "window_augmented"


@dataclass(frozen=True)
class LabeledSegment:
    samples: np.ndarray
    category: RhythmCategory
    source_record: str = ""
    provenance: Provenance = Provenance.ORIGINAL

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "category", RhythmCategory.parse(self.category))
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    def with_samples(self, samples) -> "LabeledSegment":
        return LabeledSegment(samples, self.category, self.source_record, self.provenance)

    def with_category(self, category) -> "LabeledSegment":
        return LabeledSegment(self.samples, category, self.source_record, self.provenance)


@dataclass(frozen=True)
class Dataset:
    """Equal-length labelled segments.

    Category counts are tallied once at construction.
    """

    segments: tuple[LabeledSegment, ...]
    segment_length: int
    _counts: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        segs = tuple(self.segments)
        for i, s in enumerate(segs):
            if len(s.samples) != self.segment_length:
                raise ValueError(
                    f"segment {i} has length {len(s.samples)}, expected {self.segment_length}"
                )
        object.__setattr__(self, "segments", segs)
        tally = Counter(int(s.category) for s in segs)
        object.__setattr__(self, "_counts", tuple(tally.get(k, 0) for k in range(NUM_CATEGORIES)))

    @classmethod
    def from_segments(cls, segments: Iterable[LabeledSegment], segment_length: int | None = None):
        segs = tuple(segments)
        if segment_length is None:
            if not segs:
                raise ValueError("segment_length is required for an empty dataset")
            segment_length = len(segs[0].samples)
        return cls(segs, segment_length)

    @classmethod
    def from_arrays(cls, x: np.ndarray, labels: Sequence[int], source_record: str = ""):
        x = np.asarray(x, dtype=np.float64)
        return cls(
            tuple(LabeledSegment(row, int(y), source_record) for row, y in zip(x, labels)),
            x.shape[1],
        )

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __getitem__(self, idx):
        return self.segments[idx]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.segments[i] for i in indices), self.segment_length)

    def count(self, category) -> int:
        return self._counts[int(RhythmCategory.parse(category))]

    def features(self) -> np.ndarray:
        """Samples stacked as a ``[M, 1, T]`` float64 batch."""
        if not self.segments:
            return np.zeros((0, 1, self.segment_length))
        return np.stack([s.samples for s in self.segments])[:, None, :]

    def labels(self) -> np.ndarray:
        return np.array([int(s.category) for s in self.segments], dtype=np.int64)


def category_counts(dataset: Dataset) -> dict[RhythmCategory, int]:
    return {c: dataset.count(c) for c in RhythmCategory}


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def _stem(path) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".bin", ".hdr", ".csv") else path


def _parse_header(path: Path) -> dict[str, str]:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise HeaderError(f"missing header file {path}", field="header") from None
    fields = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if ":" not in line:
            raise HeaderError(f"{path}:{lineno}: expected 'key: value'", field="header")
        key, value = line.split(":", 1)
        fields[key.strip()] = value.strip()
    for key in ("record_id", "sampling_rate_hz", "sample_count"):
        if key not in fields:
            raise HeaderError(f"header {path} lacks required key {key!r}", field=key)
    return fields


def read_annotations(path) -> list[BeatAnnotation]:
    anns = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(ANNOTATION_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise RecordFormatError(
                f"annotation file {path} lacks columns {sorted(missing)}", field=sorted(missing)[0]
            )
        for row in reader:
            try:
                anns.append(
                    BeatAnnotation(
                        int(row["start"]),
                        int(row["end"]),
                        RhythmCategory.parse(row["category"]),
                        int(row["qrs_start"]),
                        int(row["qrs_end"]),
                    )
                )
            except ValueError as exc:
                if isinstance(exc, RecordFormatError):
                    raise
                raise RecordFormatError(f"{path}: bad annotation row {row}: {exc}", field="category") from None
    return anns


def write_annotations(path, record_id: str, annotations: Sequence[BeatAnnotation]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ANNOTATION_COLUMNS)
        for a in annotations:
            writer.writerow([record_id, a.start_index, a.end_index, a.qrs_start, a.qrs_end, a.category.name])


def load_record(path, header_path=None) -> EcgRecord:
    """Read a record from its sample file, header and (optional) annotation sidecar.

    Args:
        path: sample file (``.bin``) or the shared stem.
        header_path: header file; defaults to ``<stem>.hdr``.

    Raises:
        HeaderError: missing or malformed header.
        SampleCountMismatch: sample file missing, short or long.
        AnnotationRangeError: an annotation falls outside the record.
    """
    stem = _stem(path)
    bin_path = Path(path) if Path(path).suffix == ".bin" else stem.with_suffix(".bin")
    header = _parse_header(Path(header_path) if header_path else stem.with_suffix(".hdr"))
    try:
        count = int(header["sample_count"])
        if count < 0:
            raise ValueError
    except ValueError:
        raise HeaderError(f"bad sample_count {header['sample_count']!r}", field="sample_count") from None
    try:
        rate = float(header["sampling_rate_hz"])
    except ValueError:
        raise HeaderError(
            f"bad sampling_rate_hz {header['sampling_rate_hz']!r}", field="sampling_rate_hz"
        ) from None
    try:
        scale = float(header.get("scale", "1.0"))
    except ValueError:
        raise HeaderError(f"bad scale {header['scale']!r}", field="scale") from None
    if not bin_path.exists():
        raise SampleCountMismatch(f"missing sample file {bin_path}", field="samples")
    raw = np.fromfile(bin_path, dtype="<f4")
    if bin_path.stat().st_size % 4 or len(raw) != count:
        raise SampleCountMismatch(
            f"sample count mismatch: header declares {count}, file holds {len(raw)}",
            field="sample_count",
        )
    samples = raw if scale == 1.0 else raw * np.float32(scale)
    ann_path = stem.with_suffix(".csv")
    anns = read_annotations(ann_path) if ann_path.exists() else []
    return EcgRecord(header["record_id"], rate, samples, tuple(anns))


def save_record(record: EcgRecord, path) -> None:
    """Write ``record`` as ``<stem>.bin`` + ``<stem>.hdr`` (+ ``<stem>.csv`` if annotated)."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    record.samples.astype("<f4").tofile(stem.with_suffix(".bin"))
    stem.with_suffix(".hdr").write_text(
        f"record_id: {record.record_id}\n"
        f"sampling_rate_hz: {record.sampling_rate_hz!r}\n"
        f"sample_count: {len(record.samples)}\n"
        "scale: 1.0\n",
        encoding="utf-8",
    )
    ann_path = stem.with_suffix(".csv")
    if record.annotations:
        write_annotations(ann_path, record.record_id, record.annotations)
    elif ann_path.exists():
        ann_path.unlink()


# ---------------------------------------------------------------------------
# segment archives
# ---------------------------------------------------------------------------

ARCHIVE_LABEL_COLUMNS = ("index", "category", "source_record", "provenance")


def save_dataset(dataset: Dataset, directory) -> Path:
    """Write ``segments.hdr``, ``segments.bin`` (float64 LE, row-major) and ``labels.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "segments.hdr").write_text(
        f"segment_length: {dataset.segment_length}\ncount: {len(dataset)}\ndtype: float64le\n",
        encoding="utf-8",
    )
    dataset.features()[:, 0, :].astype("<f8").tofile(directory / "segments.bin")
    with open(directory / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ARCHIVE_LABEL_COLUMNS)
        for i, s in enumerate(dataset):
            writer.writerow([i, s.category.name, s.source_record, s.provenance.value])
    return directory


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    header = {}
    try:
        text = (directory / "segments.hdr").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise HeaderError(f"missing archive header in {directory}", field="header") from None
    for line in text.splitlines():
        if ":" in line:
            k, v = line.split(":", 1)
            header[k.strip()] = v.strip()
    try:
        length, count = int(header["segment_length"]), int(header["count"])
    except (KeyError, ValueError) as exc:
        raise HeaderError(f"bad archive header in {directory}: {exc}", field="segment_length") from None
    raw = np.fromfile(directory / "segments.bin", dtype="<f8")
    if raw.size != length * count:
        raise SampleCountMismatch(
            f"sample count mismatch: archive declares {count}x{length}, file holds {raw.size} values",
            field="count",
        )
    raw = raw.reshape(count, length)
    with open(directory / "labels.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != count:
        raise SampleCountMismatch(f"label table has {len(rows)} rows, expected {count}", field="count")
    segments = tuple(
        LabeledSegment(raw[i], RhythmCategory.parse(r["category"]), r["source_record"], Provenance(r["provenance"]))
        for i, r in enumerate(rows)
    )
    return Dataset(segments, length)
