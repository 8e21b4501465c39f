"""Train/validation/test split strategies and a leakage verifier.

Three policies are supported:

* ``MixedSample`` -- samples are shuffled and cut by fraction, so one
  subject may appear in every set.
* ``CausalPerSubject`` -- each subject's samples are ordered by ``t_index``
  and cut by fraction, past before future.
* ``SubjectExclusive`` -- subjects are partitioned (leave-N-out or
  leave-one-out).

Sizes are floored for train and val; the remainder goes to test.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ._rng import make_rng
from .datamodel import Dataset
from .exceptions import SplitError


class SplitPolicy(str, enum.Enum):
    MixedSample = "MixedSample"
    CausalPerSubject = "CausalPerSubject"
    SubjectExclusive = "SubjectExclusive"


def _as_index(a) -> np.ndarray:
    arr = np.array(sorted(int(i) for i in a), dtype=np.int64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    policy: SplitPolicy
    seed: int | None = None

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, _as_index(getattr(self, name)))
        object.__setattr__(self, "policy", SplitPolicy(self.policy))

    def __eq__(self, other):
        if not isinstance(other, Split):
            return NotImplemented
        return (self.policy == other.policy and self.seed == other.seed
                and all(np.array_equal(getattr(self, n), getattr(other, n))
                        for n in ("train", "val", "test")))

    __hash__ = None

    def to_dict(self) -> dict:
        return {"policy": self.policy.value, "seed": self.seed,
                "train": self.train.tolist(), "val": self.val.tolist(),
                "test": self.test.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Split":
        return cls(train=d["train"], val=d["val"], test=d["test"],
                   policy=d["policy"], seed=d.get("seed"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Split":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class SplitConfig:
    """Split fractions and/or subject counts.

    Sample-level splitters always use ``fractions``. :func:`leave_n_out` uses
    ``n_val_subjects``/``n_test_subjects`` when given (both or neither), else
    applies ``fractions`` to the subject count. Explicit ``val_subjects`` /
    ``test_subjects`` (subject indices) override the random assignment.
    """

    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    n_val_subjects: int | None = None
    n_test_subjects: int | None = None
    seed: int = 41
    val_subjects: tuple[int, ...] | None = None
    test_subjects: tuple[int, ...] | None = None

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        object.__setattr__(self, "fractions", fr)
        if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1) > 1e-9:
            raise SplitError(f"fractions must be 3 nonnegative reals summing to 1, got {fr}")
        if (self.n_val_subjects is None) != (self.n_test_subjects is None):
            raise SplitError("give both n_val_subjects and n_test_subjects, or neither")
        if self.n_val_subjects is not None and min(self.n_val_subjects, self.n_test_subjects) < 0:
            raise SplitError("subject counts must be nonnegative")
        if (self.val_subjects is None) != (self.test_subjects is None):
            raise SplitError("give both val_subjects and test_subjects, or neither")
        for name in ("val_subjects", "test_subjects"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(int(i) for i in v))

    @property
    def count_based(self) -> bool:
        return self.n_val_subjects is not None

    def to_dict(self) -> dict:
        return {"fractions": list(self.fractions), "n_val_subjects": self.n_val_subjects,
                "n_test_subjects": self.n_test_subjects, "seed": self.seed,
                "val_subjects": None if self.val_subjects is None else list(self.val_subjects),
                "test_subjects": None if self.test_subjects is None else list(self.test_subjects)}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitConfig":
        unknown = set(d) - {"fractions", "n_val_subjects", "n_test_subjects", "seed",
                            "val_subjects", "test_subjects"}
        if unknown:
            raise SplitError(f"unknown split config keys: {sorted(unknown)}")
        return cls(**d)


class ViolationKind(str, enum.Enum):
    SubjectInTrainAndEval = "SubjectInTrainAndEval"
    TemporalOrderBroken = "TemporalOrderBroken"
    SpanOverlapAcrossSets = "SpanOverlapAcrossSets"
    IndexOverlap = "IndexOverlap"


@dataclass(frozen=True)
class SplitViolation:
    kind: ViolationKind
    detail: str

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "detail": self.detail}


@dataclass(frozen=True)
class SplitReport:
    violations: tuple[SplitViolation, ...] = ()
    leak_pair_count: int = 0
    notes: tuple[str, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"violations": [v.to_dict() for v in self.violations],
                "leak_pair_count": self.leak_pair_count, "notes": list(self.notes)}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitReport":
        return cls(tuple(SplitViolation(ViolationKind(v["kind"]), v["detail"])
                         for v in d["violations"]),
                   d["leak_pair_count"], tuple(d.get("notes", ())))


# ---------------------------------------------------------------- helpers

def _sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    n_train = int(np.floor(fractions[0] * n + 1e-9))
    n_val = int(np.floor(fractions[1] * n + 1e-9))
    return n_train, n_val, n - n_train - n_val


def _check_sizes(sizes, fractions, what: str) -> None:
    for name, size, frac in zip(("train", "val", "test"), sizes, fractions):
        if frac > 0 and size == 0:
            raise SplitError(f"{name} set would be empty: too few {what} for "
                             f"fractions {tuple(fractions)}")


def _subjects_present(dataset: Dataset) -> np.ndarray:
    return np.unique(dataset.subjects)


# ---------------------------------------------------------------- splitters

def mixed_subject_dependent(dataset: Dataset, config: SplitConfig) -> Split:
    n = len(dataset)
    if n == 0:
        raise SplitError("cannot split an empty dataset")
    sizes = _sizes(n, config.fractions)
    _check_sizes(sizes, config.fractions, "samples")
    perm = make_rng(config.seed, "split", "mixed").permutation(n)
    n_train, n_val, _ = sizes
    return Split(train=perm[:n_train], val=perm[n_train:n_train + n_val],
                 test=perm[n_train + n_val:], policy=SplitPolicy.MixedSample,
                 seed=config.seed)


def causal_subject_dependent(dataset: Dataset, config: SplitConfig) -> Split:
    """Per subject: earliest samples to train, then val, latest to test. No randomness."""
    if len(dataset) == 0:
        raise SplitError("cannot split an empty dataset")
    subjects, t_idx = dataset.subjects, dataset.t_indices
    train, val, test = [], [], []
    for z in _subjects_present(dataset):
        members = np.flatnonzero(subjects == z)
        if len(np.unique(t_idx[members])) != len(members):
            raise SplitError(f"subject {dataset.meta.subject_ids[z]!r} has repeated t_index "
                             "values; causal ordering is undefined")
        members = members[np.argsort(t_idx[members], kind="stable")]
        sizes = _sizes(len(members), config.fractions)
        _check_sizes(sizes, config.fractions,
                     f"samples for subject {dataset.meta.subject_ids[z]!r}")
        n_train, n_val, _ = sizes
        train.extend(members[:n_train])
        val.extend(members[n_train:n_train + n_val])
        test.extend(members[n_train + n_val:])
    return Split(train, val, test, SplitPolicy.CausalPerSubject, seed=None)


def _interleave_by_label(subjects: np.ndarray, subject_label: dict[int, int],
                         rng: np.random.Generator) -> list[int]:
    by_label: dict[int, list[int]] = {}
    for z in subjects:
        by_label.setdefault(subject_label[int(z)], []).append(int(z))
    groups = [by_label[k] for k in rng.permutation(sorted(by_label))]
    order = []
    for i in range(max(len(g) for g in groups)):
        order.extend(g[i] for g in groups if i < len(g))
    # evaluation sets are taken from the tail, so end on the balanced rounds
    return order[::-1]


def leave_n_out(dataset: Dataset, config: SplitConfig,
                subject_labels: dict[int, int] | None = None) -> Split:
    """Partition subjects into train/val/test.

    Subjects are shuffled with the configured seed; the last ``n_test``
    go to test and the ``n_val`` before them to validation. When
    ``subject_labels`` maps each subject to a single label, the shuffled
    subjects are first interleaved round-robin across labels so every set
    receives a spread of classes.
    """
    subjects = _subjects_present(dataset)
    S = len(subjects)
    if config.val_subjects is not None:
        val_s, test_s = set(config.val_subjects), set(config.test_subjects)
        unknown = (val_s | test_s) - set(subjects.tolist())
        if unknown:
            raise SplitError(f"explicit subject indices not in dataset: {sorted(unknown)}")
        if val_s & test_s:
            raise SplitError("explicit val and test subject lists overlap")
        train_s = set(subjects.tolist()) - val_s - test_s
        if not train_s:
            raise SplitError("no training subjects left")
    else:
        if config.count_based:
            n_val, n_test = config.n_val_subjects, config.n_test_subjects
            if n_val + n_test >= S:
                raise SplitError(f"n_val + n_test = {n_val + n_test} leaves no training "
                                 f"subjects (S={S})")
        else:
            sizes = _sizes(S, config.fractions)
            _check_sizes(sizes, config.fractions, "subjects")
            _, n_val, n_test = sizes
        rng = make_rng(config.seed, "split", "subjects")
        order = [int(z) for z in rng.permutation(subjects)]
        if subject_labels is not None:
            order = _interleave_by_label(np.array(order), subject_labels, rng)
        n_train = S - n_val - n_test
        train_s = set(order[:n_train])
        val_s = set(order[n_train:n_train + n_val])
        test_s = set(order[n_train + n_val:])

    subj = dataset.subjects
    return Split(train=np.flatnonzero(np.isin(subj, list(train_s))),
                 val=np.flatnonzero(np.isin(subj, list(val_s))),
                 test=np.flatnonzero(np.isin(subj, list(test_s))),
                 policy=SplitPolicy.SubjectExclusive, seed=config.seed)


def leave_one_out(dataset: Dataset) -> list[Split]:
    """One fold per subject (in subject-index order); validation sets are empty."""
    subjects = _subjects_present(dataset)
    if len(subjects) < 2:
        raise SplitError("leave-one-out needs at least 2 subjects")
    subj = dataset.subjects
    return [Split(train=np.flatnonzero(subj != z), val=[], test=np.flatnonzero(subj == z),
                  policy=SplitPolicy.SubjectExclusive, seed=None)
            for z in subjects]


# ---------------------------------------------------------------- verification

def _count_span_overlaps(dataset: Dataset, a_idx, b_idx) -> tuple[int, int]:
    """Pairs (a, b) from the same recording with intersecting spans.

    Returns (pair_count, samples_without_span).
    """
    missing = 0
    by_rec: dict[object, tuple[list, list]] = {}
    for which, idx in ((0, a_idx), (1, b_idx)):
        for i in idx:
            s = dataset.samples[i]
            if s.span is None:
                missing += 1
                continue
            rec = ("subject", s.subject) if s.recording is None else ("recording", s.recording)
            by_rec.setdefault(rec, ([], []))[which].append(s.span)
    total = 0
    for a_spans, b_spans in by_rec.values():
        if not a_spans or not b_spans:
            continue
        a = np.array(a_spans)
        starts, ends = np.sort(a[:, 0]), np.sort(a[:, 1])
        b = np.array(b_spans)
        # intersect iff a.start < b.end and a.end > b.start
        total += int((np.searchsorted(starts, b[:, 1], side="left")
                      - np.searchsorted(ends, b[:, 0], side="right")).sum())
    return total, missing


def verify_split(dataset: Dataset, split: Split) -> SplitReport:
    """Check a split against its declared policy and count overlap leakage.

    ``leak_pair_count`` counts train/test pairs from the same recording
    (or the same subject, for samples without a recording id) whose spans
    intersect. It is reported for every policy; only a subject-exclusive
    split treats it as a violation, since there a shared recording means a
    subject crossed sets.
    """
    violations: list[SplitViolation] = []
    notes: list[str] = []
    sets = {"train": split.train, "val": split.val, "test": split.test}
    n = len(dataset)
    for name, idx in sets.items():
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            violations.append(SplitViolation(ViolationKind.IndexOverlap,
                                             f"{name} has indices outside [0, {n})"))
    if violations:
        return SplitReport(tuple(violations), 0, ())
    names = list(sets)
    for i in range(3):
        for j in range(i + 1, 3):
            common = np.intersect1d(sets[names[i]], sets[names[j]])
            if common.size:
                violations.append(SplitViolation(
                    ViolationKind.IndexOverlap,
                    f"{common.size} indices shared by {names[i]} and {names[j]}"))

    subj = dataset.subjects
    if split.policy is SplitPolicy.SubjectExclusive:
        membership: dict[int, list[str]] = {}
        for name, idx in sets.items():
            for z in np.unique(subj[idx]):
                membership.setdefault(int(z), []).append(name)
        for z, where in sorted(membership.items()):
            if len(where) > 1:
                violations.append(SplitViolation(
                    ViolationKind.SubjectInTrainAndEval,
                    f"subject {dataset.meta.subject_ids[z]!r} in {'+'.join(where)}"))

    if split.policy is SplitPolicy.CausalPerSubject:
        t = dataset.t_indices
        for z in np.unique(subj):
            tr = t[split.train[subj[split.train] == z]]
            va = t[split.val[subj[split.val] == z]]
            te = t[split.test[subj[split.test] == z]]
            bad = []
            ev = np.concatenate([va, te])
            if tr.size and ev.size and tr.max() >= ev.min():
                bad.append("train not before val/test")
            if va.size and te.size and va.max() >= te.min():
                bad.append("val not before test")
            if bad:
                violations.append(SplitViolation(
                    ViolationKind.TemporalOrderBroken,
                    f"subject {dataset.meta.subject_ids[z]!r}: {', '.join(bad)}"))

    leak_pairs, missing = _count_span_overlaps(dataset, split.train, split.test)
    if missing:
        notes.append(f"{missing} train/test samples carry no span; "
                     "overlap is not detectable for them")
    if leak_pairs and split.policy is SplitPolicy.SubjectExclusive:
        violations.append(SplitViolation(
            ViolationKind.SpanOverlapAcrossSets,
            f"{leak_pairs} train/test window pairs share source timesteps"))
    return SplitReport(tuple(violations), leak_pairs, tuple(notes))


# ---------------------------------------------------------------- sklearn-style adapters

class LeaveNSubjectsOut:
    """Cross-validator yielding ``(train, test)`` index pairs from subject groups.

    Compatible with scikit-learn's ``cv=`` protocol; ``groups`` holds subject
    identifiers. Each of ``n_repeats`` seeds gives one subject-exclusive
    split; validation subjects are folded back into training.
    """

    def __init__(self, n_test_subjects: int = 1, n_repeats: int = 5, random_state: int = 41):
        self.n_test_subjects = n_test_subjects
        self.n_repeats = n_repeats
        self.random_state = random_state

    def get_n_splits(self, X=None, y=None, groups=None) -> int:
        return self.n_repeats

    def split(self, X, y=None, groups=None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        if groups is None:
            raise ValueError("groups (subject ids) are required")
        _, codes = np.unique(np.asarray(groups), return_inverse=True)
        S = codes.max() + 1
        if self.n_test_subjects >= S:
            raise ValueError(f"n_test_subjects={self.n_test_subjects} leaves no training subjects")
        for r in range(self.n_repeats):
            order = make_rng(self.random_state + r, "split", "subjects").permutation(S)
            test_mask = np.isin(codes, order[S - self.n_test_subjects:])
            yield np.flatnonzero(~test_mask), np.flatnonzero(test_mask)
