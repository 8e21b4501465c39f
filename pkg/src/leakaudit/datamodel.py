"""Dataset representation for subject-grouped time-series windows.

A :class:`Dataset` is an ordered, immutable collection of :class:`Sample`
windows sharing a :class:`DatasetMeta`. All index sets used elsewhere in the
package refer to positions in ``Dataset.samples``.
"""
from __future__ import annotations

import csv
import hashlib
import enum
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DatasetError

STD_FLOOR = 1e-8


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


@dataclass(frozen=True)
class DatasetMeta:
    name: str
    n_timestamps: int
    n_channels: int
    class_names: tuple[str, ...]
    subject_ids: tuple[str, ...]
    time_unit: str = "samples"

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_timestamps": self.n_timestamps,
            "n_channels": self.n_channels,
            "class_names": list(self.class_names),
            "subject_ids": list(self.subject_ids),
            "time_unit": self.time_unit,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetMeta":
        expected = {"name", "n_timestamps", "n_channels", "class_names",
                    "subject_ids", "time_unit"}
        missing = expected - set(d)
        if missing:
            raise DatasetError(f"manifest missing keys: {sorted(missing)}")
        return cls(
            name=str(d["name"]),
            n_timestamps=int(d["n_timestamps"]),
            n_channels=int(d["n_channels"]),
            class_names=tuple(str(c) for c in d["class_names"]),
            subject_ids=tuple(str(s) for s in d["subject_ids"]),
            time_unit=str(d["time_unit"]),
        )


@dataclass(frozen=True, eq=False)
class Sample:
    """One T x C window with its subject, label and temporal position."""

    subject: int
    label: int
    t_index: int
    values: np.ndarray
    recording: str | None = None
    span: tuple[float, float] | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.span is not None:
            object.__setattr__(self, "span", (float(self.span[0]), float(self.span[1])))

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.subject == other.subject
            and self.label == other.label
            and self.t_index == other.t_index
            and self.recording == other.recording
            and self.span == other.span
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    meta: DatasetMeta
    samples: tuple[Sample, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))

    def __len__(self) -> int:
        return len(self.samples)

    @cached_property
    def X(self) -> np.ndarray:
        """Stacked values, shape (n, T, C)."""
        T, C = self.meta.n_timestamps, self.meta.n_channels
        if not self.samples:
            return np.zeros((0, T, C))
        X = np.stack([s.values for s in self.samples])
        X.setflags(write=False)
        return X

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @cached_property
    def subjects(self) -> np.ndarray:
        return np.array([s.subject for s in self.samples], dtype=np.int64)

    @cached_property
    def t_indices(self) -> np.ndarray:
        return np.array([s.t_index for s in self.samples], dtype=np.int64)

    def subject_labels(self) -> dict[int, set[int]]:
        """Distinct labels per subject index."""
        out: dict[int, set[int]] = {}
        for s in self.samples:
            out.setdefault(s.subject, set()).add(s.label)
        return out

    def with_values(self, X: np.ndarray) -> "Dataset":
        samples = [replace(s, values=x) for s, x in zip(self.samples, X)]
        return Dataset(self.meta, samples)


class DatasetKind(str, enum.Enum):
    TypeI = "TypeI"
    TypeII = "TypeII"
    TypeIII = "TypeIII"
    Degenerate = "Degenerate"


@dataclass(frozen=True)
class Violation:
    index: int | None
    rule: str
    detail: str = ""


# ---------------------------------------------------------------- validation

def validate_dataset(dataset: Dataset) -> list[Violation]:
    """Check every type invariant; returns violations as data (never raises)."""
    meta = dataset.meta
    out: list[Violation] = []
    if meta.n_timestamps < 1 or meta.n_channels < 1:
        out.append(Violation(None, "invalid dimensions",
                             f"T={meta.n_timestamps}, C={meta.n_channels}"))
    if meta.n_classes < 1:
        out.append(Violation(None, "empty class set"))
    if meta.n_subjects < 1:
        out.append(Violation(None, "empty subject set"))
    if len(set(meta.class_names)) != meta.n_classes:
        out.append(Violation(None, "duplicate class name"))
    if len(set(meta.subject_ids)) != meta.n_subjects:
        out.append(Violation(None, "duplicate subject id"))

    shape = (meta.n_timestamps, meta.n_channels)
    seen: set[tuple] = set()
    for i, s in enumerate(dataset.samples):
        if s.values.shape != shape:
            out.append(Violation(i, "dimension mismatch",
                                 f"{s.values.shape} != {shape}"))
        elif not np.all(np.isfinite(s.values)):
            out.append(Violation(i, "non-finite value"))
        if not 0 <= s.label < meta.n_classes:
            out.append(Violation(i, "label out of range", str(s.label)))
        if not 0 <= s.subject < meta.n_subjects:
            out.append(Violation(i, "subject out of range", str(s.subject)))
        if s.t_index < 0:
            out.append(Violation(i, "negative t_index", str(s.t_index)))
        if s.span is not None and not s.span[1] - s.span[0] > 0:
            out.append(Violation(i, "invalid span", str(s.span)))
        key = (s.subject, s.t_index, s.recording)
        if key in seen:
            out.append(Violation(i, "duplicate temporal position", str(key)))
        seen.add(key)

    referenced = {s.subject for s in dataset.samples}
    if dataset.samples:
        for z in range(meta.n_subjects):
            if z not in referenced:
                out.append(Violation(None, "unreferenced subject",
                                     meta.subject_ids[z]))
    return out


def check_dataset(dataset: Dataset) -> Dataset:
    violations = validate_dataset(dataset)
    if violations:
        v = violations[0]
        where = "" if v.index is None else f" at sample {v.index}"
        raise DatasetError(f"{v.rule}{where}: {v.detail} "
                           f"({len(violations)} violation(s) total)")
    return dataset


def classify_dataset_kind(dataset: Dataset) -> DatasetKind:
    if not dataset.samples:
        raise DatasetError("cannot classify an empty dataset")
    per_subject = dataset.subject_labels()
    if len(per_subject) == 1:
        (labels,) = per_subject.values()
        return DatasetKind.TypeI if len(labels) >= 2 else DatasetKind.Degenerate
    if all(len(v) == 1 for v in per_subject.values()):
        return DatasetKind.TypeIII
    return DatasetKind.TypeII


# ---------------------------------------------------------------- segmentation

def segment_recording(
    recording: np.ndarray,
    subject: int,
    labels: Sequence[int] | np.ndarray,
    window_len: int,
    overlap: float,
    recording_id: str | None = None,
    t_offset: int = 0,
    span_offset: float = 0,
) -> list[Sample]:
    """Cut an L x C recording into overlapping fixed-length windows.

    Windows start at multiples of ``round(window_len * (1 - overlap))`` and
    trailing partial windows are dropped. Each window takes the majority of
    its per-timestep labels; ties go to the label at the window's first
    timestep.
    """
    recording = np.asarray(recording, dtype=np.float64)
    if recording.ndim == 1:
        recording = recording[:, None]
    labels = np.asarray(labels, dtype=np.int64)
    L = recording.shape[0]
    if labels.shape != (L,):
        raise DatasetError(f"need one label per timestep: {labels.shape} vs L={L}")
    if not 0 <= overlap < 1:
        raise DatasetError(f"overlap must lie in [0, 1), got {overlap}")
    if window_len < 1 or window_len > L:
        raise DatasetError(f"window_len={window_len} exceeds recording length {L}")
    stride = int(round(window_len * (1 - overlap)))
    if stride < 1:
        raise DatasetError(f"window_len={window_len} with overlap={overlap} gives stride 0")

    samples = []
    for ordinal, start in enumerate(range(0, L - window_len + 1, stride)):
        win_labels = labels[start:start + window_len]
        counts = np.bincount(win_labels)
        best = np.flatnonzero(counts == counts.max())
        label = int(win_labels[0]) if win_labels[0] in best else int(best[0])
        samples.append(Sample(
            subject=subject,
            label=label,
            t_index=t_offset + ordinal,
            values=recording[start:start + window_len],
            recording=recording_id,
            span=(span_offset + start, span_offset + start + window_len),
        ))
    return samples


# ---------------------------------------------------------------- standardization

class Standardizer(TransformerMixin, BaseEstimator):
    """Per-channel z-scoring for (n, T, C) windows.

    Statistics pool over samples and timesteps. Standard deviations below
    ``eps`` are floored to ``eps``.
    """

    def __init__(self, eps: float = STD_FLOOR):
        self.eps = eps

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[0] == 0:
            raise ValueError(f"expected nonempty (n, T, C) array, got {X.shape}")
        flat = X.reshape(-1, X.shape[2])
        self.mean_ = flat.mean(axis=0)
        self.scale_ = np.maximum(flat.std(axis=0), self.eps)
        self.n_features_in_ = X.shape[2]
        return self

    def transform(self, X):
        check_is_fitted(self, ("mean_", "scale_"))
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.mean_.shape[0]:
            raise ValueError(f"channel mismatch: {X.shape[-1]} vs {self.mean_.shape[0]}")
        return (X - self.mean_) / self.scale_

    def to_dict(self) -> dict:
        check_is_fitted(self, ("mean_", "scale_"))
        return {"eps": self.eps, "mean": [_fmt(v) for v in self.mean_],
                "std": [_fmt(v) for v in self.scale_]}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        obj = cls(eps=float(d["eps"]))
        obj.mean_ = np.array([float(v) for v in d["mean"]])
        obj.scale_ = np.array([float(v) for v in d["std"]])
        obj.n_features_in_ = obj.mean_.shape[0]
        return obj


def standardize(dataset: Dataset, fit_indices: Iterable[int],
                eps: float = STD_FLOOR) -> tuple[Dataset, Standardizer]:
    """Fit a :class:`Standardizer` on ``fit_indices`` only and apply it to all samples."""
    idx = np.asarray(list(fit_indices), dtype=np.int64)
    if idx.size == 0:
        raise DatasetError("fit_indices is empty")
    if idx.min() < 0 or idx.max() >= len(dataset):
        raise DatasetError("fit_indices out of bounds")
    scaler = Standardizer(eps=eps).fit(dataset.X[idx])
    return dataset.with_values(scaler.transform(dataset.X)), scaler


# ---------------------------------------------------------------- file I/O

def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def _infer_format(path: Path, fmt: str | None) -> str:
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt not in ("jsonl", "csv"):
        raise DatasetError(f"unsupported dataset format {fmt!r}")
    return fmt


def save_dataset(dataset: Dataset, path: str | Path, format: str | None = None) -> None:
    """Write ``path`` plus a sibling ``<stem>.manifest.json``.

    Values are written with 17 significant digits, so loading returns
    bit-identical floats.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    meta = dataset.meta
    n_values = meta.n_timestamps * meta.n_channels
    with open(manifest_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta.to_dict(), fh, indent=2)
        fh.write("\n")

    with open(path, "w", encoding="utf-8", newline="") as fh:
        if fmt == "jsonl":
            for s in dataset.samples:
                span = "null" if s.span is None else f"[{_fmt(s.span[0])}, {_fmt(s.span[1])}]"
                vals = ", ".join(_fmt(v) for v in s.values.reshape(-1))
                fh.write(
                    f'{{"subject": {json.dumps(meta.subject_ids[s.subject])}, '
                    f'"label": {json.dumps(meta.class_names[s.label])}, '
                    f'"t_index": {s.t_index}, "recording": {json.dumps(s.recording)}, '
                    f'"span": {span}, "values": [{vals}]}}\n'
                )
        else:
            writer = csv.writer(fh)
            writer.writerow(["subject", "label", "t_index", "recording",
                             "span_start", "span_end"]
                            + [f"v{i}" for i in range(n_values)])
            for s in dataset.samples:
                span = ("", "") if s.span is None else tuple(_fmt(v) for v in s.span)
                writer.writerow([meta.subject_ids[s.subject], meta.class_names[s.label],
                                 s.t_index, "" if s.recording is None else s.recording,
                                 *span, *(_fmt(v) for v in s.values.reshape(-1))])


def _parse_row(lineno: int, meta: DatasetMeta, subj_idx: dict, cls_idx: dict,
               subject, label, t_index, recording, span, values) -> Sample:
    n_values = meta.n_timestamps * meta.n_channels
    if subject not in subj_idx:
        raise DatasetError(f"line {lineno}: unknown subject {subject!r}")
    if label not in cls_idx:
        raise DatasetError(f"line {lineno}: unknown class {label!r}")
    try:
        arr = np.array([float(v) for v in values], dtype=np.float64)
        t_index = int(t_index)
        if span is not None:
            span = (float(span[0]), float(span[1]))
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"line {lineno}: malformed row ({exc})") from exc
    if arr.size != n_values:
        raise DatasetError(f"line {lineno}: dimension mismatch: got {arr.size} values, "
                           f"manifest requires T*C={n_values}")
    if not np.all(np.isfinite(arr)):
        raise DatasetError(f"line {lineno}: non-finite value")
    return Sample(subject=subj_idx[subject], label=cls_idx[label], t_index=t_index,
                  values=arr.reshape(meta.n_timestamps, meta.n_channels),
                  recording=recording, span=span)


def load_dataset(path: str | Path, format: str | None = None) -> Dataset:
    path = Path(path)
    fmt = _infer_format(path, format)
    mpath = manifest_path(path)
    try:
        with open(mpath, encoding="utf-8") as fh:
            meta = DatasetMeta.from_dict(json.load(fh))
        fh = open(path, encoding="utf-8", newline="")
    except FileNotFoundError as exc:
        raise DatasetError(f"missing file: {exc.filename}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{mpath}: malformed manifest ({exc})") from exc

    subj_idx = {s: i for i, s in enumerate(meta.subject_ids)}
    cls_idx = {c: i for i, c in enumerate(meta.class_names)}
    samples = []
    with fh:
        if fmt == "jsonl":
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    row = (rec["subject"], rec["label"], rec["t_index"],
                           rec.get("recording"), rec.get("span"), rec["values"])
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DatasetError(f"line {lineno}: malformed row ({exc})") from exc
                samples.append(_parse_row(lineno, meta, subj_idx, cls_idx, *row))
        else:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:6] != ["subject", "label", "t_index", "recording",
                                                "span_start", "span_end"]:
                raise DatasetError("line 1: malformed CSV header")
            for lineno, row in enumerate(reader, start=2):
                if len(row) < 6:
                    raise DatasetError(f"line {lineno}: malformed row")
                span = None if row[4] == "" and row[5] == "" else (row[4], row[5])
                samples.append(_parse_row(lineno, meta, subj_idx, cls_idx, row[0], row[1],
                                          row[2], row[3] or None, span, row[6:]))
    return check_dataset(Dataset(meta, samples))


def dataset_digest(dataset: Dataset) -> str:
    """SHA-256 over the canonical content of a dataset."""
    h = hashlib.sha256(json.dumps(dataset.meta.to_dict(), sort_keys=True).encode())
    for s in dataset.samples:
        h.update(np.array([s.subject, s.label, s.t_index], dtype=np.int64).tobytes())
        h.update(repr((s.recording, s.span)).encode())
        h.update(np.ascontiguousarray(s.values).tobytes())
    return h.hexdigest()

