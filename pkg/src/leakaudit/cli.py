"""Command-line interface: ``leakaudit {gen,split,eval,audit,report}``.

Configuration comes from a JSON file (``--config``) and/or flags; flags
override file values and mirror config keys in kebab-case.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 run failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import __version__
from .audit import (
    DEFAULT_SEEDS,
    AuditConfig,
    SeedRun,
    SetupResult,
    _evaluate,
    load_report,
    render_report,
    run_full_audit,
    run_setup_experiment,
)
from .classifier import PAPER_MLP, Selection, TrainConfig, predict, train
from .datamodel import Dataset, dataset_digest, load_dataset, save_dataset
from .exceptions import ConfigError, DatasetError, LeakAuditError
from .protocols import EvaluationSetup, build_setup
from .splitters import Split, SplitConfig, verify_split
from .synthgen import (
    SynthType2Config,
    SynthType3Config,
    generate_type2,
    generate_type3,
    parse_synth_spec,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUN = 0, 2, 3, 4

CONFIG_KEYS = {
    "dataset_path", "dataset_format", "synth_type3", "synth_type2", "setups",
    "include_causal", "include_loo", "split", "train", "seeds", "out", "formats",
    "relabel_mode", "jobs", "n_mc", "rindep_tolerance", "paper_mlp",
}


@dataclass
class RunConfig:
    dataset_path: str | None = None
    dataset_format: str | None = None
    synth_type3: dict | None = None
    synth_type2: dict | None = None
    setups: list[str] | None = None
    include_causal: bool = False
    include_loo: bool = False
    split: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    out: str | None = None
    formats: list[str] = field(default_factory=lambda: ["json", "markdown"])
    relabel_mode: str = "assign"
    jobs: int = 1
    n_mc: int = 1000
    rindep_tolerance: float = 0.05
    paper_mlp: bool = False

    @property
    def n_sources(self) -> int:
        return sum(x is not None for x in (self.dataset_path, self.synth_type3, self.synth_type2))

    def split_config(self) -> SplitConfig:
        try:
            return SplitConfig.from_dict(self.split)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"split: {exc}") from exc

    def train_config(self) -> TrainConfig:
        params = dict(PAPER_MLP) if self.paper_mlp else {}
        params.update(self.train)
        try:
            return TrainConfig.from_dict(params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train: {exc}") from exc

    def audit_config(self) -> AuditConfig:
        return AuditConfig(
            setups=None if not self.setups else tuple(EvaluationSetup(s) for s in self.setups),
            split_config=self.split_config(), train_config=self.train_config(),
            seeds=tuple(self.seeds), relabel_mode=self.relabel_mode, n_mc=self.n_mc,
            rindep_tolerance=self.rindep_tolerance, include_causal=self.include_causal,
            include_loo=self.include_loo, jobs=self.jobs)


def _synth(value, kind: str) -> dict:
    if isinstance(value, str):
        return parse_synth_spec(value, kind)
    if isinstance(value, dict):
        return value
    raise ConfigError(f"synth_{kind} must be an object or 'key=value,...' string")


def _csv_list(text: str, cast=str) -> list:
    try:
        return [cast(x.strip()) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad list {text!r}: {exc}") from exc


def parse_config(config_path: str | None = None, flags: argparse.Namespace | None = None,
                 require_source: bool = True) -> RunConfig:
    """Merge a JSON config file with command-line overrides into a :class:`RunConfig`."""
    raw: dict = {}
    if config_path:
        try:
            raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {config_path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")

    if flags is not None:
        f = vars(flags)
        for key in ("dataset_path", "dataset_format", "synth_type3", "synth_type2", "out",
                    "relabel_mode", "jobs", "n_mc", "rindep_tolerance"):
            if f.get(key) is not None:
                raw[key] = f[key]
        for key in ("include_causal", "include_loo", "paper_mlp"):
            if f.get(key):
                raw[key] = True
        if f.get("setups"):
            raw["setups"] = _csv_list(f["setups"])
        if f.get("seeds"):
            raw["seeds"] = _csv_list(f["seeds"], int)
        if f.get("formats"):
            raw["formats"] = _csv_list(f["formats"])
        split = dict(raw.get("split", {}))
        if f.get("fractions"):
            split["fractions"] = _csv_list(f["fractions"], float)
        for key in ("n_val_subjects", "n_test_subjects"):
            if f.get(key) is not None:
                split[key] = f[key]
        raw["split"] = split
        tr = dict(raw.get("train", {}))
        for key in ("hidden_width", "epochs", "batch_size", "learning_rate"):
            if f.get(key) is not None:
                tr[key] = f[key]
        if f.get("selection"):
            tr["selection"] = f["selection"]
        raw["train"] = tr

    try:
        cfg = RunConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.synth_type3 is not None:
        cfg.synth_type3 = _synth(cfg.synth_type3, "type3")
    if cfg.synth_type2 is not None:
        cfg.synth_type2 = _synth(cfg.synth_type2, "type2")
    if cfg.n_sources > 1:
        raise ConfigError("give exactly one dataset source (dataset_path, synth_type3 or synth_type2)")
    if require_source and cfg.n_sources == 0:
        raise ConfigError("no dataset source given")
    if not cfg.seeds:
        raise ConfigError("seeds must be nonempty")
    if cfg.relabel_mode not in ("assign", "permute"):
        raise ConfigError("relabel_mode must be 'assign' or 'permute'")
    for fmt in cfg.formats:
        if fmt not in ("json", "markdown"):
            raise ConfigError(f"unknown report format {fmt!r}")
    for s in cfg.setups or ():
        try:
            EvaluationSetup(s)
        except ValueError as exc:
            raise ConfigError(f"unknown setup {s!r}; choose from "
                              f"{[e.value for e in EvaluationSetup]}") from exc
    if "seed" in cfg.train:
        raise ConfigError("train.seed is set per run from 'seeds'")
    cfg.split_config()
    cfg.train_config()
    return cfg


# ---------------------------------------------------------------- helpers

def _load_source(cfg: RunConfig):
    """Returns (dataset, breakdown-or-None)."""
    if cfg.dataset_path is not None:
        return load_dataset(cfg.dataset_path, cfg.dataset_format), None
    try:
        if cfg.synth_type3 is not None:
            return generate_type3(SynthType3Config.from_dict(cfg.synth_type3),
                                  return_components=True)
        return generate_type2(SynthType2Config.from_dict(cfg.synth_type2)), None
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _prepare_out(out: str | None) -> Path:
    if not out:
        raise ConfigError("--out is required")
    path = Path(out)
    if path.exists() and (not path.is_dir() or any(path.iterdir())):
        raise ConfigError(f"output directory {path} already exists; refusing to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, argv, cfg: RunConfig | None,
                    dataset: Dataset | None, inputs: list[str], started: float) -> None:
    doc = {
        "tool": "leakaudit", "tool_version": __version__, "command": command,
        "argv": list(argv), "config": None if cfg is None else asdict(cfg),
        "dataset_sha256": None if dataset is None else dataset_digest(dataset),
        "inputs": {p: _sha256(Path(p)) for p in inputs if Path(p).is_file()},
        "outputs": {p.name: _sha256(p) for p in sorted(out.iterdir()) if p.is_file()},
        "timing": {"started_unix": started, "elapsed_s": round(time.time() - started, 3)},
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _inputs(args, cfg: RunConfig | None) -> list[str]:
    paths = [getattr(args, "config", None), getattr(args, "split", None)]
    if cfg is not None and cfg.dataset_path:
        paths += [cfg.dataset_path]
    return [p for p in paths if p]


# ---------------------------------------------------------------- commands

def cmd_gen(args, argv) -> int:
    started = time.time()
    cfg = parse_config(args.config, args)
    if cfg.dataset_path is not None:
        raise ConfigError("gen needs a synthetic source (--synth-type3 or --synth-type2)")
    out = _prepare_out(cfg.out)
    dataset, breakdown = _load_source(cfg)
    fmt = args.format
    save_dataset(dataset, out / f"dataset.{fmt}", fmt)
    if breakdown is not None and args.breakdown:
        with open(out / "breakdown.jsonl", "w", encoding="utf-8") as fh:
            for i in range(len(dataset)):
                fh.write(json.dumps({name: getattr(breakdown, name)[i].reshape(-1).tolist()
                                     for name in ("disease", "subject", "noise")}) + "\n")
    _write_manifest(out, "gen", argv, cfg, dataset, _inputs(args, cfg), started)
    print(f"wrote {len(dataset)} samples to {out}")
    return EXIT_OK


def cmd_split(args, argv) -> int:
    started = time.time()
    cfg = parse_config(args.config, args)
    out = _prepare_out(cfg.out)
    dataset, _ = _load_source(cfg)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    data, split, record = build_setup(args.setup, dataset, cfg.split_config(), seed,
                                      cfg.relabel_mode, fold=args.fold)
    report = verify_split(data, split)
    split.save(out / "split.json")
    (out / "split_report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n",
                                           encoding="utf-8")
    (out / "relabel.json").write_text(json.dumps(record.to_dict(), indent=2) + "\n",
                                      encoding="utf-8")
    _write_manifest(out, "split", argv, cfg, dataset, _inputs(args, cfg), started)
    print(f"{split.policy.value}: train={split.train.size} val={split.val.size} "
          f"test={split.test.size} leak_pairs={report.leak_pair_count} "
          f"violations={len(report.violations)}")
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    started = time.time()
    cfg = parse_config(args.config, args)
    out = _prepare_out(cfg.out)
    dataset, _ = _load_source(cfg)
    setup = EvaluationSetup(args.setup)
    if args.split:
        try:
            split = Split.load(args.split)
        except (OSError, KeyError, ValueError) as exc:
            raise DatasetError(f"cannot read split file {args.split}: {exc}") from exc
        seed = split.seed if split.seed is not None else cfg.seeds[0]
        data, _, record = build_setup(setup, dataset, cfg.split_config(), seed, cfg.relabel_mode)
        report = verify_split(data, split)
        if not report.ok:
            raise DatasetError("split violates its policy: "
                               + "; ".join(v.detail for v in report.violations))
        tcfg = replace(cfg.train_config(), seed=seed)
        if split.val.size == 0:
            tcfg = replace(tcfg, selection=Selection.LastEpoch)
        model = train(data, split, tcfg)
        pred = predict(model, data, split.test)[0]
        acc, f1, chance = _evaluate(data, split.test, pred, seed, cfg.n_mc)
        result = SetupResult(setup, data.meta.n_classes, (SeedRun(
            seed, acc, f1, chance, int(split.test.size), model.selected_epoch, report, record),))
    else:
        result = run_setup_experiment(dataset, setup, cfg.split_config(), cfg.train_config(),
                                      cfg.seeds, cfg.relabel_mode, cfg.n_mc)
    (out / "setup_result.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n",
                                           encoding="utf-8")
    _write_manifest(out, "eval", argv, cfg, dataset, _inputs(args, cfg), started)
    f1 = result.macro_f1
    print(f"{setup.label}: macro-F1 {100 * f1.mean:.2f}±{100 * f1.std:.2f} "
          f"(chance {100 * result.chance_f1.mean:.2f})")
    return EXIT_OK


def cmd_audit(args, argv) -> int:
    started = time.time()
    cfg = parse_config(args.config, args)
    out = _prepare_out(cfg.out)
    dataset, _ = _load_source(cfg)
    report = run_full_audit(dataset, cfg.audit_config())
    # report.json is always written; `report` re-renders from it
    (out / "report.json").write_text(render_report(report, "json"), encoding="utf-8")
    if "markdown" in cfg.formats:
        (out / "report.md").write_text(render_report(report, "markdown"), encoding="utf-8")
    _write_manifest(out, "audit", argv, cfg, dataset, _inputs(args, cfg), started)
    if report.diagnostics is not None:
        g = report.diagnostics
        print(f"ssr={g.ssr:.3f} severity={g.severity.value} "
              f"rindep_pass={g.rindep_pass}")
    print(f"report written to {out}")
    return EXIT_OK


def cmd_report(args, argv) -> int:
    try:
        report = load_report(Path(args.input))
    except FileNotFoundError as exc:
        raise ConfigError(f"report file not found: {args.input}") from exc
    except (KeyError, ValueError) as exc:
        raise DatasetError(f"{args.input}: {exc}") from exc
    text = render_report(report, args.format)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, with_source=True) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="output directory (must not exist or be empty)")
    if with_source:
        src = p.add_argument_group("dataset source")
        src.add_argument("--dataset-path", help="dataset .jsonl/.csv (manifest alongside)")
        src.add_argument("--dataset-format", choices=["jsonl", "csv"])
        src.add_argument("--synth-type3", help='e.g. "S=20,K=3,m=200,T=64,C=4"')
        src.add_argument("--synth-type2", help='e.g. "S=10,K=2,segments=10,L=100,T=20,overlap=0.8"')
    sp = p.add_argument_group("splitting")
    sp.add_argument("--fractions", help="train,val,test fractions, e.g. 0.6,0.2,0.2")
    sp.add_argument("--n-val-subjects", type=int)
    sp.add_argument("--n-test-subjects", type=int)
    sp.add_argument("--relabel-mode", choices=["assign", "permute"])
    tr = p.add_argument_group("training")
    tr.add_argument("--hidden-width", type=int)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--learning-rate", type=float)
    tr.add_argument("--selection", choices=[s.value for s in Selection])
    tr.add_argument("--paper-mlp", action="store_true", help="hidden width 256")
    tr.add_argument("--seeds", help="comma-separated seeds (default 41,42,43,44,45)")
    tr.add_argument("--n-mc", type=int, help="Monte-Carlo draws for chance macro-F1")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="leakaudit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"leakaudit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    setups = [s.value for s in EvaluationSetup]

    p = sub.add_parser("gen", help="generate a synthetic cohort")
    _common(p)
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--breakdown", action="store_true",
                   help="also write per-sample components (Type-III only)")

    p = sub.add_parser("split", help="materialize one setup's split and verify it")
    _common(p)
    p.add_argument("--setup", choices=setups, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--fold", type=int, default=0, help="fold for sub-indep-loo")

    p = sub.add_parser("eval", help="run one setup over all seeds")
    _common(p)
    p.add_argument("--setup", choices=setups, required=True)
    p.add_argument("--split", help="use this split JSON instead of generating one")

    p = sub.add_parser("audit", help="run the full setup battery")
    _common(p)
    p.add_argument("--setups", help="comma-separated setups (default: battery for the data kind)")
    p.add_argument("--include-causal", action="store_true")
    p.add_argument("--include-loo", action="store_true")
    p.add_argument("--formats", help="comma-separated: json,markdown")
    p.add_argument("--jobs", type=int, help="worker processes for (setup, seed) runs")
    p.add_argument("--rindep-tolerance", type=float)

    p = sub.add_parser("report", help="re-render an existing report.json")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", choices=["json", "markdown"], default="markdown")
    p.add_argument("--out", dest="output", help="write to file instead of stdout")
    return parser


COMMANDS = {"gen": cmd_gen, "split": cmd_split, "eval": cmd_eval, "audit": cmd_audit,
            "report": cmd_report}


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, argv)
    except ConfigError as exc:
        print(f"leakaudit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print(f"leakaudit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LeakAuditError as exc:
        print(f"leakaudit: run failed: {exc}", file=sys.stderr)
        return EXIT_RUN


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
