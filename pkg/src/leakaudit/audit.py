"""Run evaluation setups across seeds and derive leakage diagnostics."""
from __future__ import annotations

import enum
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from ._rng import PRNG_NAME
from .classifier import Selection, TrainConfig, predict, train
from .datamodel import Dataset, DatasetKind, classify_dataset_kind, dataset_digest
from .exceptions import SetupError, SplitVerificationError
from .metrics import MetricSummary, accuracy, chance_level, confusion_matrix, macro_f1, summarize_runs
from .protocols import EvaluationSetup, RelabelRecord, build_setup
from .splitters import SplitConfig, SplitReport, leave_one_out, verify_split

SCHEMA_VERSION = 1
DEFAULT_SEEDS = (41, 42, 43, 44, 45)
TYPE3_BATTERY = (EvaluationSetup.SubDepMixed, EvaluationSetup.SubIndepLNO,
                 EvaluationSetup.SubDisc, EvaluationSetup.RSubDep, EvaluationSetup.RSubIndep)
TYPE2_BATTERY = (EvaluationSetup.SubDepMixed, EvaluationSetup.SubDepCausal,
                 EvaluationSetup.SubIndepLNO)

SSR_MIN_DENOMINATOR = 0.01
SEVERE_SSR = 0.8
MODERATE_SSR = 0.3

CONVENTIONS = {
    "std": "sample standard deviation (n-1 denominator); 0 for a single seed",
    "macro_f1": "unweighted mean over all declared classes; zero-support classes score 0",
    "chance_f1": "Monte-Carlo mean macro-F1 of a uniform-random predictor on each seed's test labels",
    "ssr": "tool-defined: clamp((F1[R-Sub-Dep] - chance) / (F1[Sub-Dep] - chance), 0, 1); "
           "0 when the denominator is <= 0.01",
    "severity": "Severe if ssr >= 0.8, Moderate if ssr >= 0.3, else None (tool policy)",
    "standardizer": "per-channel z-score fit on the training indices only",
}


class Severity(str, enum.Enum):
    None_ = "None"
    Moderate = "Moderate"
    Severe = "Severe"


@dataclass(frozen=True)
class AuditConfig:
    setups: tuple[EvaluationSetup, ...] | None = None
    split_config: SplitConfig = field(default_factory=SplitConfig)
    train_config: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    relabel_mode: str = "assign"
    n_mc: int = 1000
    rindep_tolerance: float = 0.05
    include_causal: bool = False
    include_loo: bool = False
    jobs: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.setups is not None:
            object.__setattr__(self, "setups", tuple(EvaluationSetup(s) for s in self.setups))


@dataclass(frozen=True)
class SeedRun:
    seed: int
    accuracy: float
    macro_f1: float
    chance_f1: float
    n_test: int
    selected_epoch: int
    split_report: SplitReport
    relabel: RelabelRecord

    def to_dict(self) -> dict:
        return {"seed": self.seed, "accuracy": self.accuracy, "macro_f1": self.macro_f1,
                "chance_f1": self.chance_f1, "n_test": self.n_test,
                "selected_epoch": self.selected_epoch,
                "split_report": self.split_report.to_dict(), "relabel": self.relabel.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "SeedRun":
        return cls(d["seed"], d["accuracy"], d["macro_f1"], d["chance_f1"], d["n_test"],
                   d["selected_epoch"], SplitReport.from_dict(d["split_report"]),
                   RelabelRecord.from_dict(d["relabel"]))


@dataclass(frozen=True)
class SetupResult:
    setup: EvaluationSetup
    n_classes: int
    runs: tuple[SeedRun, ...]

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.runs]

    @property
    def accuracy(self) -> MetricSummary:
        return summarize_runs([r.accuracy for r in self.runs])

    @property
    def macro_f1(self) -> MetricSummary:
        return summarize_runs([r.macro_f1 for r in self.runs])

    @property
    def chance_f1(self) -> MetricSummary:
        return summarize_runs([r.chance_f1 for r in self.runs])

    @property
    def relabel_records(self) -> list[RelabelRecord]:
        return [r.relabel for r in self.runs]

    @property
    def split_reports(self) -> list[SplitReport]:
        return [r.split_report for r in self.runs]

    def to_dict(self) -> dict:
        seeds = self.seeds
        return {
            "setup": self.setup.value,
            "n_classes": self.n_classes,
            "seeds": seeds,
            "metrics": [
                {"metric": "accuracy", "seeds": seeds, **self.accuracy.to_dict()},
                {"metric": "macro_f1", "seeds": seeds, **self.macro_f1.to_dict()},
                {"metric": "chance_macro_f1", "seeds": seeds, **self.chance_f1.to_dict()},
            ],
            "runs": [r.to_dict() for r in self.runs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SetupResult":
        return cls(EvaluationSetup(d["setup"]), d["n_classes"],
                   tuple(SeedRun.from_dict(r) for r in d["runs"]))


@dataclass(frozen=True)
class LeakageDiagnostics:
    chance_f1: float
    chance_acc: float
    ssr: float
    generalization_gap: float
    subject_identifiability: float
    rindep_delta: float
    rindep_pass: bool
    rindep_chance_f1: float
    rindep_tolerance: float
    severity: Severity

    @property
    def rindep_sanity(self) -> dict:
        return {"delta": self.rindep_delta, "pass": self.rindep_pass}

    def to_dict(self) -> dict:
        return {
            "chance_f1": self.chance_f1, "chance_acc": self.chance_acc, "ssr": self.ssr,
            "generalization_gap": self.generalization_gap,
            "subject_identifiability": self.subject_identifiability,
            "rindep_sanity": {"delta": self.rindep_delta, "pass": self.rindep_pass,
                              "chance_f1": self.rindep_chance_f1,
                              "tolerance": self.rindep_tolerance},
            "severity": self.severity.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LeakageDiagnostics":
        r = d["rindep_sanity"]
        return cls(d["chance_f1"], d["chance_acc"], d["ssr"], d["generalization_gap"],
                   d["subject_identifiability"], r["delta"], r["pass"], r["chance_f1"],
                   r["tolerance"], Severity(d["severity"]))


@dataclass(frozen=True)
class OverlapDiagnostics:
    """Mixed-versus-causal comparison for multi-class (Type-II) subjects."""

    causal_gap: float | None
    leak_pairs: dict[str, float]

    def to_dict(self) -> dict:
        return {"causal_gap": self.causal_gap, "leak_pairs": dict(self.leak_pairs)}

    @classmethod
    def from_dict(cls, d: dict) -> "OverlapDiagnostics":
        return cls(d["causal_gap"], d["leak_pairs"])


@dataclass(frozen=True)
class AuditReport:
    dataset: dict
    kind: DatasetKind
    train_config: TrainConfig
    split_config: SplitConfig
    results: tuple[SetupResult, ...]
    diagnostics: LeakageDiagnostics | None
    overlap: OverlapDiagnostics | None
    environment: dict
    schema_version: int = SCHEMA_VERSION

    def result(self, setup) -> SetupResult:
        setup = EvaluationSetup(setup)
        for r in self.results:
            if r.setup is setup:
                return r
        raise KeyError(setup.value)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "dataset": self.dataset,
            "kind": self.kind.value,
            "model": {"name": "mlp", **self.train_config.to_dict()},
            "split_config": self.split_config.to_dict(),
            "results": [r.to_dict() for r in self.results],
            "diagnostics": None if self.diagnostics is None else self.diagnostics.to_dict(),
            "overlap_diagnostics": None if self.overlap is None else self.overlap.to_dict(),
            "environment": self.environment,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AuditReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema_version {d.get('schema_version')!r}")
        model = dict(d["model"])
        model.pop("name", None)
        return cls(
            dataset=d["dataset"], kind=DatasetKind(d["kind"]),
            train_config=TrainConfig.from_dict(model),
            split_config=SplitConfig.from_dict(d["split_config"]),
            results=tuple(SetupResult.from_dict(r) for r in d["results"]),
            diagnostics=(None if d["diagnostics"] is None
                         else LeakageDiagnostics.from_dict(d["diagnostics"])),
            overlap=(None if d.get("overlap_diagnostics") is None
                     else OverlapDiagnostics.from_dict(d["overlap_diagnostics"])),
            environment=d["environment"],
        )


# ---------------------------------------------------------------- experiments

def _evaluate(data: Dataset, test_idx, pred, seed: int, n_mc: int):
    k = data.meta.n_classes
    y_true = data.labels[test_idx]
    cm = confusion_matrix(y_true, pred, k)
    chance = chance_level(k, "macro_f1", y_true, n_mc=n_mc, seed=seed)
    return accuracy(cm), macro_f1(cm), chance


def _run_seed(dataset: Dataset, setup: EvaluationSetup, split_config: SplitConfig,
              train_config: TrainConfig, seed: int, relabel_mode: str, n_mc: int) -> SeedRun:
    cfg = replace(train_config, seed=seed)
    if setup is EvaluationSetup.SubIndepLOO:
        # all folds, pooled predictions; no validation set so keep the last epoch
        cfg = replace(cfg, selection=Selection.LastEpoch)
        n_folds = len(leave_one_out(dataset))
        test_all, pred_all, epochs, leak = [], [], [], 0
        for fold in range(n_folds):
            data, split, record = build_setup(setup, dataset, split_config, seed,
                                              relabel_mode, fold=fold)
            report = verify_split(data, split)
            if not report.ok:
                raise SplitVerificationError(f"{setup.value} fold {fold}: {report.violations}")
            leak += report.leak_pair_count
            model = train(data, split, cfg)
            test_all.append(split.test)
            pred_all.append(predict(model, data, split.test)[0])
            epochs.append(model.selected_epoch)
        test_idx, pred = np.concatenate(test_all), np.concatenate(pred_all)
        acc, f1, chance = _evaluate(data, test_idx, pred, seed, n_mc)
        return SeedRun(seed, acc, f1, chance, int(test_idx.size), epochs[-1],
                       SplitReport((), leak, (f"{n_folds} folds pooled",)), record)

    data, split, record = build_setup(setup, dataset, split_config, seed, relabel_mode)
    report = verify_split(data, split)
    if not report.ok:
        raise SplitVerificationError(
            f"{setup.value} seed {seed}: " + "; ".join(v.detail for v in report.violations))
    model = train(data, split, cfg)
    pred = predict(model, data, split.test)[0]
    acc, f1, chance = _evaluate(data, split.test, pred, seed, n_mc)
    return SeedRun(seed, acc, f1, chance, int(split.test.size), model.selected_epoch,
                   report, record)


def run_setup_experiment(dataset: Dataset, setup, split_config: SplitConfig | None = None,
                         train_config: TrainConfig | None = None,
                         seeds: Sequence[int] = DEFAULT_SEEDS, relabel_mode: str = "assign",
                         n_mc: int = 1000) -> SetupResult:
    """Build, verify, train and score ``setup`` once per seed.

    Each seed drives relabeling, splitting, weight init and batch order.
    """
    setup = EvaluationSetup(setup)
    if not seeds:
        raise ValueError("seeds must be nonempty")
    split_config = split_config or SplitConfig()
    train_config = train_config or TrainConfig()
    runs = [_run_seed(dataset, setup, split_config, train_config, int(s), relabel_mode, n_mc)
            for s in seeds]
    k = build_setup(setup, dataset, split_config, int(seeds[0]), relabel_mode)[0].meta.n_classes
    return SetupResult(setup, k, tuple(runs))


def default_battery(kind: DatasetKind, include_causal=False, include_loo=False):
    if kind is DatasetKind.TypeIII:
        battery = list(TYPE3_BATTERY)
        if include_causal:
            battery.insert(1, EvaluationSetup.SubDepCausal)
    elif kind is DatasetKind.TypeII:
        battery = list(TYPE2_BATTERY)
    else:
        raise SetupError("full audit requires multi-subject data "
                         f"(got a {kind.value} dataset)")
    if include_loo:
        battery.append(EvaluationSetup.SubIndepLOO)
    return tuple(battery)


def _task(args) -> tuple[str, int, SeedRun]:
    dataset, setup, split_config, train_config, seed, relabel_mode, n_mc = args
    return setup.value, seed, _run_seed(dataset, setup, split_config, train_config, seed,
                                        relabel_mode, n_mc)


def run_full_audit(dataset: Dataset, audit_config: AuditConfig | None = None) -> AuditReport:
    """Run the setup battery for the dataset's kind and assemble a report.

    Single-label subjects (Type-III) get Sub-Dep, Sub-Indep, Sub-Disc,
    R-Sub-Dep and R-Sub-Indep plus shortcut diagnostics; multi-class
    subjects (Type-II) get mixed, causal and subject-independent splits
    plus overlap diagnostics. With ``jobs > 1`` the (setup, seed) runs fan
    out to worker processes; results are identical to a serial run.
    """
    cfg = audit_config or AuditConfig()
    kind = classify_dataset_kind(dataset)
    battery = cfg.setups or default_battery(kind, cfg.include_causal, cfg.include_loo)
    if kind not in (DatasetKind.TypeII, DatasetKind.TypeIII):
        raise SetupError("full audit requires multi-subject data "
                         f"(got a {kind.value} dataset)")

    tasks = [(dataset, setup, cfg.split_config, cfg.train_config, seed, cfg.relabel_mode,
              cfg.n_mc) for setup in battery for seed in cfg.seeds]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            done = list(pool.map(_task, tasks))
    else:
        done = [_task(t) for t in tasks]
    by_key = {(name, seed): run for name, seed, run in done}

    results = []
    for setup in battery:
        k = build_setup(setup, dataset, cfg.split_config, cfg.seeds[0],
                        cfg.relabel_mode)[0].meta.n_classes
        results.append(SetupResult(setup, k, tuple(by_key[(setup.value, s)]
                                                   for s in cfg.seeds)))
    by_setup = {r.setup: r for r in results}

    diagnostics = None
    if kind is DatasetKind.TypeIII and all(s in by_setup for s in TYPE3_BATTERY):
        diagnostics = compute_diagnostics(by_setup, dataset.meta.n_classes,
                                          tolerance=cfg.rindep_tolerance)
    overlap = None
    if EvaluationSetup.SubDepCausal in by_setup:
        gap = None
        if EvaluationSetup.SubDepMixed in by_setup:
            gap = (by_setup[EvaluationSetup.SubDepMixed].macro_f1.mean
                   - by_setup[EvaluationSetup.SubDepCausal].macro_f1.mean)
        overlap = OverlapDiagnostics(gap, {
            r.setup.value: float(np.mean([rep.leak_pair_count for rep in r.split_reports]))
            for r in results})

    environment = {
        "tool": "leakaudit", "tool_version": __version__, "prng": PRNG_NAME,
        "seeds": list(cfg.seeds), "relabel_mode": cfg.relabel_mode, "n_mc": cfg.n_mc,
        "battery": [s.value for s in battery], "conventions": CONVENTIONS,
        "thresholds": {"ssr_moderate": MODERATE_SSR, "ssr_severe": SEVERE_SSR,
                       "ssr_min_denominator": SSR_MIN_DENOMINATOR,
                       "rindep_tolerance": cfg.rindep_tolerance},
    }
    dataset_info = {**dataset.meta.to_dict(), "n_samples": len(dataset),
                    "sha256": dataset_digest(dataset)}
    return AuditReport(dataset_info, kind, cfg.train_config, cfg.split_config, tuple(results),
                       diagnostics, overlap, environment)


# ---------------------------------------------------------------- diagnostics

def shortcut_reliance(f1_dep: float, f1_rdep: float, chance: float) -> float:
    denom = f1_dep - chance
    if denom <= SSR_MIN_DENOMINATOR:
        return 0.0
    return float(min(1.0, max(0.0, (f1_rdep - chance) / denom)))


def severity_of(ssr: float) -> Severity:
    if ssr >= SEVERE_SSR:
        return Severity.Severe
    if ssr >= MODERATE_SSR:
        return Severity.Moderate
    return Severity.None_


def _mean_f1(value) -> float:
    return value.macro_f1.mean if isinstance(value, SetupResult) else float(value)


def compute_diagnostics(results: Mapping, k: int, test_labels=None, *,
                        chance_f1: float | None = None,
                        rindep_chance_f1: float | None = None,
                        tolerance: float = 0.05, n_mc: int = 1000,
                        seed: int = 0) -> LeakageDiagnostics:
    """Shortcut diagnostics from per-setup mean macro-F1 values.

    ``results`` maps setups to :class:`SetupResult` objects or plain mean
    F1 values. The chance level comes from ``chance_f1`` if given, else
    from ``test_labels`` by Monte-Carlo, else from the chance recorded in
    the Sub-Dep result. R-Sub-Indep is compared with its own recorded
    chance when available.
    """
    res = {EvaluationSetup(key): v for key, v in results.items()}
    required = TYPE3_BATTERY
    missing = [s.value for s in required if s not in res]
    if missing:
        raise KeyError(f"diagnostics need results for {missing}")
    if chance_f1 is None:
        if test_labels is not None:
            chance_f1 = chance_level(k, "macro_f1", test_labels, n_mc=n_mc, seed=seed)
        elif isinstance(res[EvaluationSetup.SubDepMixed], SetupResult):
            chance_f1 = res[EvaluationSetup.SubDepMixed].chance_f1.mean
        else:
            raise ValueError("need chance_f1, test_labels, or SetupResult inputs")
    if rindep_chance_f1 is None:
        rindep = res[EvaluationSetup.RSubIndep]
        rindep_chance_f1 = (rindep.chance_f1.mean if isinstance(rindep, SetupResult)
                            else chance_f1)

    f1 = {s: _mean_f1(res[s]) for s in required}
    ssr = shortcut_reliance(f1[EvaluationSetup.SubDepMixed], f1[EvaluationSetup.RSubDep],
                            chance_f1)
    delta = f1[EvaluationSetup.RSubIndep] - rindep_chance_f1
    return LeakageDiagnostics(
        chance_f1=float(chance_f1), chance_acc=1.0 / k, ssr=ssr,
        generalization_gap=f1[EvaluationSetup.SubDepMixed] - f1[EvaluationSetup.SubIndepLNO],
        subject_identifiability=f1[EvaluationSetup.SubDisc],
        rindep_delta=float(delta), rindep_pass=bool(abs(delta) <= tolerance),
        rindep_chance_f1=float(rindep_chance_f1), rindep_tolerance=tolerance,
        severity=severity_of(ssr),
    )


# ---------------------------------------------------------------- rendering

def _pct(summary: MetricSummary) -> str:
    return f"{100 * summary.mean:.2f}±{100 * summary.std:.2f}"


def render_report(report: AuditReport, format: str = "json") -> str:
    if format == "json":
        return json.dumps(report.to_dict(), indent=2) + "\n"
    if format != "markdown":
        raise ValueError(f"unknown report format {format!r}")

    d = report.dataset
    lines = [
        f"# Leakage audit: {d['name']}",
        "",
        f"- kind: {report.kind.value}; subjects: {len(d['subject_ids'])}; "
        f"classes: {len(d['class_names'])}; samples: {d['n_samples']}",
        f"- model: MLP, hidden width {report.train_config.hidden_width}, "
        f"{report.train_config.epochs} epochs, selection {report.train_config.selection.value}",
        f"- seeds: {', '.join(str(s) for s in report.environment['seeds'])}",
        "",
        "| Setup | Classes | Accuracy | F1 Score | Chance F1 |",
        "|---|---|---|---|---|",
    ]
    for r in report.results:
        lines.append(f"| {r.setup.label} | {r.n_classes} | {_pct(r.accuracy)} | "
                     f"{_pct(r.macro_f1)} | {100 * r.chance_f1.mean:.2f} |")
    lines.append("")
    if report.diagnostics is not None:
        g = report.diagnostics
        lines += [
            "## Diagnostics",
            "",
            f"- subject-shortcut reliance (ssr, tool-defined): {g.ssr:.3f} -> **{g.severity.value}**",
            f"- generalization gap (Sub-Dep minus Sub-Indep F1): {100 * g.generalization_gap:.2f} points",
            f"- subject identifiability (Sub-Disc F1): {100 * g.subject_identifiability:.2f}",
            f"- chance F1 / accuracy: {100 * g.chance_f1:.2f} / {100 * g.chance_acc:.2f}",
            f"- R-Sub-Indep sanity: delta {100 * g.rindep_delta:+.2f} points vs chance "
            f"{100 * g.rindep_chance_f1:.2f} -> {'pass' if g.rindep_pass else 'FAIL'} "
            f"(tolerance {100 * g.rindep_tolerance:.0f} points)",
            "",
        ]
    if report.overlap is not None:
        o = report.overlap
        lines += ["## Overlap leakage", ""]
        if o.causal_gap is not None:
            lines.append(f"- mixed minus causal F1: {100 * o.causal_gap:.2f} points")
        for name, count in o.leak_pairs.items():
            lines.append(f"- {name}: mean overlapping train/test window pairs {count:g}")
        lines.append("")
    return "\n".join(lines)


def check_report_consistency(doc: dict, atol: float = 1e-12) -> AuditReport:
    """Parse a report dict, checking stored summaries and diagnostics.

    Every metric block must match a recomputation from the per-seed values,
    and the diagnostics must match a recomputation from the per-setup means.
    Returns the parsed report; raises ValueError on any mismatch.
    """
    report = AuditReport.from_dict(doc)
    for raw, r in zip(doc["results"], report.results):
        fresh = {"accuracy": r.accuracy, "macro_f1": r.macro_f1,
                 "chance_macro_f1": r.chance_f1}
        for block in raw["metrics"]:
            again = fresh[block["metric"]]
            if (list(block["per_seed"]) != list(again.values)
                    or abs(block["mean"] - again.mean) > atol
                    or abs(block["std"] - again.std) > atol):
                raise ValueError(f"{r.setup.value}: stored {block['metric']} summary does "
                                 "not match its per-seed values")
    if report.diagnostics is not None:
        g = report.diagnostics
        again = compute_diagnostics({r.setup: r for r in report.results},
                                    len(report.dataset["class_names"]),
                                    chance_f1=g.chance_f1, rindep_chance_f1=g.rindep_chance_f1,
                                    tolerance=g.rindep_tolerance)
        if again.to_dict() != g.to_dict():
            raise ValueError("diagnostics do not match the report's per-setup means")
    return report


def load_report(text_or_path) -> AuditReport:
    """Parse report JSON (a string or a path) and verify its internal consistency."""
    text = text_or_path
    if not isinstance(text_or_path, str) or not text_or_path.lstrip().startswith("{"):
        text = Path(text_or_path).read_text(encoding="utf-8")
    return check_report_consistency(json.loads(text))
