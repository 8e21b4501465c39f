"""Evaluation setups: a label transform followed by a split strategy."""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from ._rng import make_rng
from .datamodel import Dataset, DatasetKind, classify_dataset_kind
from .exceptions import SetupError
from .splitters import (
    Split,
    SplitConfig,
    causal_subject_dependent,
    leave_n_out,
    leave_one_out,
    mixed_subject_dependent,
)

MAX_RELABEL_RETRIES = 100


class EvaluationSetup(str, enum.Enum):
    SubDepMixed = "sub-dep-mixed"
    SubDepCausal = "sub-dep-causal"
    SubIndepLNO = "sub-indep-lno"
    SubIndepLOO = "sub-indep-loo"
    SubDisc = "sub-disc"
    RSubDep = "r-sub-dep"
    RSubIndep = "r-sub-indep"

    @property
    def label(self) -> str:
        return _DISPLAY[self]


_DISPLAY = {
    EvaluationSetup.SubDepMixed: "Sub-Dep",
    EvaluationSetup.SubDepCausal: "Sub-Dep (causal)",
    EvaluationSetup.SubIndepLNO: "Sub-Indep",
    EvaluationSetup.SubIndepLOO: "Sub-Indep (LOO)",
    EvaluationSetup.SubDisc: "Sub-Disc",
    EvaluationSetup.RSubDep: "R-Sub-Dep",
    EvaluationSetup.RSubIndep: "R-Sub-Indep",
}


class RelabelTransform(str, enum.Enum):
    None_ = "None"
    RandomPerSubject = "RandomPerSubject"
    SubjectAsClass = "SubjectAsClass"


@dataclass(frozen=True)
class RelabelRecord:
    mapping: dict[int, int]
    original_k: int
    transform: RelabelTransform
    seed: int | None = None
    retries: int = 0
    mode: str | None = None

    def to_dict(self) -> dict:
        return {"transform": self.transform.value, "original_k": self.original_k,
                "mapping": {str(k): v for k, v in sorted(self.mapping.items())},
                "seed": self.seed, "retries": self.retries, "mode": self.mode}

    @classmethod
    def from_dict(cls, d: dict) -> "RelabelRecord":
        return cls(mapping={int(k): v for k, v in d["mapping"].items()},
                   original_k=d["original_k"], transform=RelabelTransform(d["transform"]),
                   seed=d.get("seed"), retries=d.get("retries", 0), mode=d.get("mode"))


def _relabel(dataset: Dataset, mapping: dict[int, int], class_names=None) -> Dataset:
    meta = dataset.meta if class_names is None else replace(dataset.meta, class_names=class_names)
    return Dataset(meta, [replace(s, label=mapping[s.subject]) for s in dataset.samples])


def randomize_subject_labels(dataset: Dataset, seed: int,
                             mode: str = "assign") -> tuple[Dataset, RelabelRecord]:
    """Give every subject a fresh random label, shared by all its samples.

    ``mode="assign"`` draws each subject's label independently and uniformly
    from the K classes; ``mode="permute"`` shuffles the existing
    subject-to-label map instead. A draw that leaves some class with no
    subject is redrawn with ``seed + 1``, ``seed + 2``, ...
    """
    if mode not in ("assign", "permute"):
        raise ValueError(f"relabel mode must be 'assign' or 'permute', got {mode!r}")
    k = dataset.meta.n_classes
    if k < 2:
        raise SetupError("random relabeling needs at least 2 classes")
    if classify_dataset_kind(dataset) is not DatasetKind.TypeIII:
        raise SetupError("random relabeling needs single-label subjects (Type-III data)")

    subjects = sorted(dataset.subject_labels())
    original = [next(iter(dataset.subject_labels()[z])) for z in subjects]
    for retry in range(MAX_RELABEL_RETRIES + 1):
        rng = make_rng(seed + retry, "relabel", mode)
        if mode == "assign":
            drawn = rng.integers(0, k, size=len(subjects))
        else:
            drawn = rng.permutation(original)
        if len(set(drawn.tolist())) == k:
            break
    else:
        raise SetupError(f"no class-covering relabeling within {MAX_RELABEL_RETRIES} retries "
                         f"({len(subjects)} subjects, {k} classes)")
    mapping = {z: int(lbl) for z, lbl in zip(subjects, drawn)}
    record = RelabelRecord(mapping, k, RelabelTransform.RandomPerSubject,
                           seed=seed, retries=retry, mode=mode)
    return _relabel(dataset, mapping), record


def subject_discrimination_relabel(dataset: Dataset) -> tuple[Dataset, RelabelRecord]:
    """Relabel each sample with its subject; classes follow first appearance."""
    order: list[int] = []
    for s in dataset.samples:
        if s.subject not in order:
            order.append(s.subject)
    if len(order) < 2:
        raise SetupError("subject discrimination needs at least 2 subjects")
    mapping = {z: i for i, z in enumerate(order)}
    names = tuple(dataset.meta.subject_ids[z] for z in order)
    record = RelabelRecord(mapping, dataset.meta.n_classes, RelabelTransform.SubjectAsClass)
    return _relabel(dataset, mapping, class_names=names), record


def _identity(dataset: Dataset) -> RelabelRecord:
    return RelabelRecord({}, dataset.meta.n_classes, RelabelTransform.None_)


def single_label_map(dataset: Dataset) -> dict[int, int] | None:
    """Subject -> label when every subject carries exactly one label."""
    per = dataset.subject_labels()
    if all(len(v) == 1 for v in per.values()):
        return {z: next(iter(v)) for z, v in per.items()}
    return None


def build_setup(setup: EvaluationSetup | str, dataset: Dataset, split_config: SplitConfig,
                seed: int, relabel_mode: str = "assign", fold: int = 0,
                stratify: bool = True) -> tuple[Dataset, Split, RelabelRecord]:
    """Materialize ``setup`` on ``dataset``.

    The relabel transform runs before splitting. ``seed`` drives both the
    relabeling and the split (it replaces ``split_config.seed``). For
    leave-N-out splits of single-label data, subjects are stratified by
    their (possibly new) label unless ``stratify`` is False.
    """
    setup = EvaluationSetup(setup)
    if not dataset.samples:
        raise SetupError("dataset is empty")
    config = replace(split_config, seed=seed)

    if setup is EvaluationSetup.SubDisc:
        data, record = subject_discrimination_relabel(dataset)
    elif setup in (EvaluationSetup.RSubDep, EvaluationSetup.RSubIndep):
        data, record = randomize_subject_labels(dataset, seed, relabel_mode)
    else:
        data, record = dataset, _identity(dataset)

    if setup in (EvaluationSetup.SubDepMixed, EvaluationSetup.SubDisc, EvaluationSetup.RSubDep):
        split = mixed_subject_dependent(data, config)
    elif setup is EvaluationSetup.SubDepCausal:
        keys = set()
        for s in data.samples:
            if (s.subject, s.t_index) in keys:
                raise SetupError("causal split needs distinct t_index values per subject")
            keys.add((s.subject, s.t_index))
        split = causal_subject_dependent(data, config)
    elif setup is EvaluationSetup.SubIndepLOO:
        folds = leave_one_out(data)
        if not 0 <= fold < len(folds):
            raise SetupError(f"fold {fold} out of range for {len(folds)} folds")
        split = folds[fold]
    else:
        labels = single_label_map(data) if stratify else None
        split = leave_n_out(data, config, subject_labels=labels)
    return data, split, record
