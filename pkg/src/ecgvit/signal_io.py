"""ECG record loading, fixed-window segmentation and leave-one-subject-out folds."""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import IngestionError, ParameterError, ProtocolError

DROP = None

# WESAD condition codes: 0 transient, 1 baseline, 2 stress, 3 amusement, 4 meditation, 5-7 ignored.
_WESAD_NAMES = {"1": "baseline", "2": "stress", "3": "amusement"}
_WESAD_DROPPED = ("0", "4", "5", "6", "7", "transient", "meditation")


@dataclass
class LabelScheme:
    """Maps raw annotation strings to class indices (or ``DROP``)."""

    mode: str
    class_names: list[str]
    mapping: dict[str, int | None]

    def __post_init__(self):
        if self.mode not in ("three_class", "binary"):
            raise ParameterError(f"unknown label mode {self.mode!r}")
        self.mapping = {str(k): v for k, v in self.mapping.items()}
        for raw, idx in self.mapping.items():
            if idx is not None and not 0 <= idx < len(self.class_names):
                raise ParameterError(f"label {raw!r} maps to class {idx}, outside {self.class_names}")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def lookup(self, raw) -> int | None:
        key = str(raw)
        if key not in self.mapping:
            raise IngestionError(f"label {key!r} is not covered by the {self.mode} label scheme")
        return self.mapping[key]

    @classmethod
    def wesad(cls, mode: str = "three_class") -> "LabelScheme":
        mapping: dict[str, int | None] = {k: DROP for k in _WESAD_DROPPED}
        if mode == "three_class":
            names = ["amusement", "baseline", "stress"]
            for code, name in _WESAD_NAMES.items():
                mapping[code] = mapping[name] = names.index(name)
        elif mode == "binary":
            names = ["no_stress", "stress"]
            for code, name in _WESAD_NAMES.items():
                mapping[code] = mapping[name] = 1 if name == "stress" else 0
        else:
            raise ParameterError(f"unknown label mode {mode!r}")
        return cls(mode, names, mapping)

    @classmethod
    def from_dict(cls, spec: Mapping[str, Any]) -> "LabelScheme":
        try:
            return cls(spec.get("mode", "three_class"), list(spec["class_names"]), dict(spec["mapping"]))
        except KeyError as exc:
            raise IngestionError(f"label scheme is missing field {exc}") from exc

    def to_dict(self) -> dict:
        return {"mode": self.mode, "class_names": list(self.class_names), "mapping": dict(self.mapping)}


@dataclass
class EcgRecord:
    subject_id: str
    sampling_rate_hz: float
    samples: np.ndarray
    labels: np.ndarray  # per-sample raw label strings; "" marks unannotated samples
    source: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=object)
        if not self.sampling_rate_hz or self.sampling_rate_hz <= 0:
            raise IngestionError(f"{self.source or self.subject_id}: sampling rate must be positive")
        if self.samples.size == 0:
            raise IngestionError(f"{self.source or self.subject_id}: record has no samples")
        if self.labels.shape != self.samples.shape:
            raise IngestionError(f"{self.source or self.subject_id}: {self.labels.size} labels for {self.samples.size} samples")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sampling_rate_hz


@dataclass
class Segment:
    subject_id: str
    samples: np.ndarray
    label: int
    source_offset: int
    record_index: int = 0

    @property
    def segment_id(self) -> str:
        return f"{self.subject_id}_{self.record_index:02d}_{self.source_offset:08d}"


@dataclass
class Fold:
    held_out_subject: str
    train_segment_ids: list[str] = field(default_factory=list)
    test_segment_ids: list[str] = field(default_factory=list)


def _read_csv(path: Path, subject_id: str, rate: float | None, scheme: LabelScheme | None) -> EcgRecord:
    if rate is None:
        raise IngestionError(f"{path}: sampling_rate_hz must be supplied for CSV records")
    samples: list[float] = []
    labels: list[str] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError(f"{path}: empty file")
        cols = [h.strip() for h in header]
        if "ecg" not in cols or "label" not in cols:
            raise IngestionError(f"{path}:1: header must contain 'ecg' and 'label' columns, got {cols}")
        i_ecg, i_lab = cols.index("ecg"), cols.index("label")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(cols):
                raise IngestionError(f"{path}:{lineno}: expected {len(cols)} fields, got {len(row)}")
            try:
                samples.append(float(row[i_ecg]))
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: bad ecg value {row[i_ecg]!r}") from exc
            raw = row[i_lab].strip()
            if scheme is not None and raw not in scheme.mapping:
                raise IngestionError(f"{path}:{lineno}: unknown label {raw!r}")
            labels.append(raw)
    if not samples:
        raise IngestionError(f"{path}: no data rows")
    return EcgRecord(subject_id, rate, np.array(samples), np.array(labels, dtype=object), source=str(path))


def _read_raw_f32(path: Path, subject_id: str | None, rate: float | None, scheme: LabelScheme | None) -> EcgRecord:
    sidecar = path.with_suffix(".json")
    try:
        meta = json.loads(sidecar.read_text())
    except OSError as exc:
        raise IngestionError(f"{path}: missing sidecar {sidecar.name}") from exc
    except json.JSONDecodeError as exc:
        raise IngestionError(f"{sidecar}: invalid JSON ({exc})") from exc
    data = path.read_bytes()
    if len(data) == 0:
        raise IngestionError(f"{path}: empty file")
    if len(data) % 4:
        raise IngestionError(f"{path}: size {len(data)} is not a multiple of 4 bytes")
    samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    subject_id = str(meta.get("subject_id", subject_id or ""))
    rate = meta.get("sampling_rate_hz", rate)
    if rate is None:
        raise IngestionError(f"{sidecar}: missing sampling_rate_hz")
    labels = np.full(samples.size, "", dtype=object)
    for k, iv in enumerate(meta.get("intervals", [])):
        try:
            start, end, raw = int(iv["start"]), int(iv["end"]), str(iv["label"])
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestionError(f"{sidecar}: interval {k} malformed") from exc
        if not 0 <= start < end <= samples.size:
            raise IngestionError(f"{sidecar}: interval {k} [{start}, {end}) outside [0, {samples.size})")
        if scheme is not None and raw not in scheme.mapping:
            raise IngestionError(f"{sidecar}: interval {k} has unknown label {raw!r}")
        labels[start:end] = raw
    return EcgRecord(subject_id, float(rate), samples, labels, source=str(path))


def load_record(
    path: str | Path,
    format: str = "csv",
    subject_id: str | None = None,
    sampling_rate_hz: float | None = None,
    scheme: LabelScheme | None = None,
) -> EcgRecord:
    """Read one subject file.

    CSV files carry a header with ``ecg`` and ``label`` columns (``t`` is
    optional and ignored); the sampling rate comes from the caller. ``raw_f32``
    files are little-endian float32 with a JSON sidecar holding
    ``subject_id``, ``sampling_rate_hz`` and labelled ``intervals``.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    if subject_id is None:
        subject_id = path.stem
    if format == "csv":
        return _read_csv(path, subject_id, sampling_rate_hz, scheme)
    if format == "raw_f32":
        return _read_raw_f32(path, subject_id, sampling_rate_hz, scheme)
    raise IngestionError(f"{path}: unknown record format {format!r}")


def write_csv_record(path: str | Path, samples: Sequence[float], labels: Sequence[str], rate: float | None = None) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        if rate:
            w.writerow(["t", "ecg", "label"])
            for i, (x, lab) in enumerate(zip(samples, labels)):
                w.writerow([f"{i / rate:.6f}", repr(float(x)), lab])
        else:
            w.writerow(["ecg", "label"])
            for x, lab in zip(samples, labels):
                w.writerow([repr(float(x)), lab])


def segment(
    record: EcgRecord,
    scheme: LabelScheme,
    window_s: float = 1.0,
    hop_s: float | None = None,
    record_index: int = 0,
) -> list[Segment]:
    """Cut ``record`` into fixed-length windows with a single mapped label each.

    Windows that straddle a label change, touch unannotated samples or map to
    ``DROP`` are skipped, as is a tail shorter than one window.
    """
    if hop_s is None:
        hop_s = window_s
    win = int(round(window_s * record.sampling_rate_hz))
    hop = int(round(hop_s * record.sampling_rate_hz))
    if win < 8:
        raise ParameterError(f"window of {window_s}s at {record.sampling_rate_hz} Hz is {win} samples; need >= 8")
    if hop < 1:
        raise ParameterError("hop must be at least one sample")

    labels = record.labels
    out: list[Segment] = []
    for start in range(0, record.samples.size - win + 1, hop):
        window_labels = labels[start : start + win]
        first = window_labels[0]
        if first == "" or np.any(window_labels != first):
            continue
        cls = scheme.lookup(first)
        if cls is None:
            continue
        out.append(Segment(record.subject_id, record.samples[start : start + win].copy(), cls, start, record_index))
    return out


def _natural_key(s: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", s)]


def sort_subjects(subjects) -> list[str]:
    return sorted(set(subjects), key=_natural_key)


def losocv_folds(segments: Sequence[Segment]) -> list[Fold]:
    """One fold per subject: that subject's segments are the test set, all others train."""
    subjects = sort_subjects(s.subject_id for s in segments)
    if len(subjects) < 2:
        raise ProtocolError(f"leave-one-subject-out needs at least 2 subjects, got {len(subjects)}")
    folds = []
    for held in subjects:
        fold = Fold(held)
        for s in segments:
            (fold.test_segment_ids if s.subject_id == held else fold.train_segment_ids).append(s.segment_id)
        folds.append(fold)
    return folds


def check_fold(fold: Fold, subject_of: Mapping[str, str]) -> None:
    """Raise ``ProtocolError`` unless the fold is disjoint and subject-pure."""
    train, test = set(fold.train_segment_ids), set(fold.test_segment_ids)
    if train & test:
        raise ProtocolError(f"fold {fold.held_out_subject}: train and test share segments")
    if any(subject_of[i] != fold.held_out_subject for i in test):
        raise ProtocolError(f"fold {fold.held_out_subject}: test set contains other subjects")
    if any(subject_of[i] == fold.held_out_subject for i in train):
        raise ProtocolError(f"fold {fold.held_out_subject}: held-out subject leaks into training")


# dataset manifests

@dataclass
class RecordEntry:
    path: Path
    format: str = "csv"
    subject_id: str | None = None
    sampling_rate_hz: float | None = None


@dataclass
class Manifest:
    """Parsed dataset manifest JSON.

    Example::

        {"records": [{"path": "s2.csv", "subject_id": "2", "sampling_rate_hz": 256}],
         "labels": {"mode": "three_class", "class_names": ["low", "medium", "high"],
                    "mapping": {"low": 0, "medium": 1, "high": 2}},
         "window_s": 1.0, "hop_s": 1.0,
         "stft": {"win_len": 64, "hop": 16}, "image": {"height": 224, "width": 224},
         "vit": {...}, "cnn1d": {...}, "train": {...}}

    ``labels`` may also be ``"wesad"`` (preset) or ``{"three_class": {...}, "binary": {...}}``.
    """

    records: list[RecordEntry]
    labels: Any
    window_s: float = 1.0
    hop_s: float | None = None
    extra: dict = field(default_factory=dict)
    path: Path | None = None

    def scheme(self, mode: str | None = None) -> LabelScheme:
        spec = self.labels
        if isinstance(spec, str):
            if spec.lower() != "wesad":
                raise IngestionError(f"unknown label preset {spec!r}")
            return LabelScheme.wesad(mode or "three_class")
        if not isinstance(spec, Mapping):
            raise IngestionError("manifest 'labels' must be a preset name or an object")
        if "three_class" in spec or "binary" in spec:
            key = mode or ("three_class" if "three_class" in spec else "binary")
            if key not in spec:
                raise IngestionError(f"manifest has no {key!r} label scheme")
            return LabelScheme.from_dict({"mode": key, **spec[key]})
        scheme = LabelScheme.from_dict(spec)
        if mode is not None and scheme.mode != mode:
            raise IngestionError(f"manifest label scheme is {scheme.mode}, requested {mode}")
        return scheme

    def load_segments(self, mode: str | None = None) -> tuple[list[Segment], LabelScheme]:
        scheme = self.scheme(mode)
        segments: list[Segment] = []
        for k, entry in enumerate(self.records):
            rec = load_record(entry.path, entry.format, entry.subject_id, entry.sampling_rate_hz, scheme)
            segments.extend(segment(rec, scheme, self.window_s, self.hop_s, record_index=k))
        return segments, scheme


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise IngestionError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IngestionError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(raw, dict):
        raise IngestionError(f"{path}: manifest must be a JSON object")
    records = []
    for k, r in enumerate(raw.get("records", [])):
        if "path" not in r:
            raise IngestionError(f"{path}: record {k} has no 'path'")
        rp = Path(r["path"])
        if not rp.is_absolute():
            rp = path.parent / rp
        rate = r.get("sampling_rate_hz", raw.get("sampling_rate_hz"))
        records.append(RecordEntry(rp, r.get("format", "csv"), r.get("subject_id"), rate))
    if "labels" not in raw:
        raise IngestionError(f"{path}: manifest has no 'labels' section")
    known = {"records", "labels", "window_s", "hop_s", "sampling_rate_hz"}
    extra = {k: v for k, v in raw.items() if k not in known}
    return Manifest(records, raw["labels"], float(raw.get("window_s", 1.0)), raw.get("hop_s"), extra, path)
