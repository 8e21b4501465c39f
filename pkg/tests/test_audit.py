import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_meta
from leakaudit.audit import (
    AuditConfig,
    AuditReport,
    Severity,
    compute_diagnostics,
    load_report,
    render_report,
    run_full_audit,
    run_setup_experiment,
    severity_of,
    shortcut_reliance,
)
from leakaudit.classifier import TrainConfig
from leakaudit.datamodel import Dataset, Sample
from leakaudit.exceptions import SetupError, SplitError
from leakaudit.metrics import MetricSummary
from leakaudit.protocols import EvaluationSetup as E
from leakaudit.splitters import SplitConfig
from leakaudit.synthgen import SynthType2Config, SynthType3Config, generate_type2, generate_type3

FAST = TrainConfig(epochs=4, hidden_width=16)
TINY3 = SynthType3Config(n_subjects=8, samples_per_subject=20, n_timestamps=8, n_channels=2)
SPLIT = SplitConfig(n_val_subjects=2, n_test_subjects=2)


def _setup_scores(dep, rdep, indep=0.5, disc=0.9, rindep=0.33):
    return {E.SubDepMixed: dep, E.RSubDep: rdep, E.SubIndepLNO: indep, E.SubDisc: disc,
            E.RSubIndep: rindep}


@pytest.fixture(scope="module")
def tiny_report():
    ds, _ = generate_type3(TINY3)
    return run_full_audit(ds, AuditConfig(split_config=SPLIT, train_config=FAST,
                                          seeds=(41, 42), n_mc=200))


class TestDiagnosticsArithmetic:
    def test_adftd(self):
        g = compute_diagnostics(_setup_scores(0.9756, 0.9712, indep=0.4872), 3,
                                chance_f1=1 / 3)
        assert g.ssr == pytest.approx(0.6379 / 0.6423, abs=1e-3)
        assert g.ssr == pytest.approx(0.993, abs=1e-3)
        assert g.severity is Severity.Severe
        assert g.generalization_gap == pytest.approx(0.4884, abs=1e-12)

    def test_ptbxl(self):
        g = compute_diagnostics(_setup_scores(0.8802, 0.7115), 5, chance_f1=0.2)
        assert g.ssr == pytest.approx(0.5115 / 0.6802, abs=1e-12)
        assert round(g.ssr, 3) == 0.752
        assert g.severity is Severity.Moderate

    def test_rdep_at_chance(self):
        g = compute_diagnostics(_setup_scores(0.9, 0.25), 4, chance_f1=0.25)
        assert g.ssr == 0.0 and g.severity is Severity.None_

    def test_degenerate_denominator(self):
        assert shortcut_reliance(0.255, 0.9, 0.25) == 0.0

    def test_clamped(self):
        assert shortcut_reliance(0.8, 0.95, 0.3) == 1.0
        assert shortcut_reliance(0.8, 0.1, 0.3) == 0.0

    def test_thresholds(self):
        assert severity_of(0.8) is Severity.Severe
        assert severity_of(0.7999) is Severity.Moderate
        assert severity_of(0.3) is Severity.Moderate
        assert severity_of(0.2999) is Severity.None_

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 0.5))
    def test_monotone_in_rdep(self, dep, r1, r2, chance):
        lo, hi = sorted((r1, r2))
        assert shortcut_reliance(dep, lo, chance) <= shortcut_reliance(dep, hi, chance)

    def test_rindep_sanity(self):
        g = compute_diagnostics(_setup_scores(0.9, 0.9, rindep=0.36), 3, chance_f1=0.33)
        assert g.rindep_pass and g.rindep_delta == pytest.approx(0.03)
        g = compute_diagnostics(_setup_scores(0.9, 0.9, rindep=0.40), 3, chance_f1=0.33)
        assert not g.rindep_pass

    def test_chance_from_test_labels(self):
        labels = np.repeat([0, 1], 100)
        g = compute_diagnostics(_setup_scores(0.9, 0.5), 2, labels, n_mc=5000)
        assert abs(g.chance_f1 - 0.5) < 0.02
        assert g.chance_acc == 0.5

    def test_missing_setup(self):
        res = _setup_scores(0.9, 0.9)
        del res[E.SubDisc]
        with pytest.raises(KeyError):
            compute_diagnostics(res, 3, chance_f1=1 / 3)


class TestExperiments:
    def test_single_seed_std_zero(self):
        ds, _ = generate_type3(TINY3)
        r = run_setup_experiment(ds, E.SubDepMixed, SPLIT, FAST, seeds=[41], n_mc=100)
        assert r.macro_f1.std == 0.0 and r.accuracy.std == 0.0
        assert r.seeds == [41]

    def test_subdisc_above_chance(self):
        ds, _ = generate_type3(SynthType3Config(n_subjects=8, samples_per_subject=50,
                                                n_timestamps=32))
        r = run_setup_experiment(ds, E.SubDisc, SPLIT, TrainConfig(epochs=30, hidden_width=32),
                                 seeds=[41], n_mc=100)
        assert r.n_classes == 8
        assert r.macro_f1.mean > 3 * (1 / 8)

    def test_two_subjects_lno(self):
        ds, _ = generate_type3(SynthType3Config(n_subjects=2, n_classes=2, samples_per_subject=10,
                                                n_timestamps=4))
        with pytest.raises(SplitError, match="no training"):
            run_setup_experiment(ds, E.SubIndepLNO, SplitConfig(n_val_subjects=1,
                                                                n_test_subjects=1), FAST)

    def test_loo_pools_all_subjects(self):
        ds, _ = generate_type3(SynthType3Config(n_subjects=4, n_classes=2, samples_per_subject=10,
                                                n_timestamps=4))
        r = run_setup_experiment(ds, E.SubIndepLOO, SPLIT, FAST, seeds=[41], n_mc=100)
        assert r.runs[0].n_test == 40
        assert "4 folds pooled" in r.runs[0].split_report.notes


class TestFullAudit:
    def test_type3_battery(self, tiny_report):
        assert {r.setup for r in tiny_report.results} == {E.SubDepMixed, E.SubIndepLNO,
                                                          E.SubDisc, E.RSubDep, E.RSubIndep}
        assert tiny_report.diagnostics is not None
        assert all(rep.ok for r in tiny_report.results for rep in r.split_reports)

    def test_type2_battery(self):
        ds = generate_type2(SynthType2Config(n_subjects=5, segments_per_subject=4,
                                             window_len=10, segment_len=40))
        report = run_full_audit(ds, AuditConfig(split_config=SplitConfig(n_val_subjects=1,
                                                                        n_test_subjects=1),
                                                train_config=FAST, seeds=(41,), n_mc=100))
        assert [r.setup for r in report.results] == [E.SubDepMixed, E.SubDepCausal,
                                                     E.SubIndepLNO]
        assert report.diagnostics is None
        assert report.overlap.leak_pairs["sub-dep-mixed"] > 0
        assert report.overlap.leak_pairs["sub-dep-causal"] == 0
        assert report.overlap.leak_pairs["sub-indep-lno"] == 0

    def test_type1_rejected(self):
        samples = [Sample(0, i % 2, i, [[0.0]]) for i in range(10)]
        with pytest.raises(SetupError, match="full audit requires multi-subject data"):
            run_full_audit(Dataset(make_meta(1, 2, T=1), samples))

    def test_parallel_matches_serial(self):
        ds, _ = generate_type3(SynthType3Config(n_subjects=6, samples_per_subject=10,
                                                n_timestamps=4, n_channels=1))
        kw = dict(split_config=SplitConfig(n_val_subjects=1, n_test_subjects=2),
                  train_config=TrainConfig(epochs=2, hidden_width=8), seeds=(41, 42), n_mc=50)
        serial = run_full_audit(ds, AuditConfig(**kw))
        parallel = run_full_audit(ds, AuditConfig(**kw, jobs=2))
        assert render_report(serial) == render_report(parallel)

    def test_deterministic(self, tiny_report):
        ds, _ = generate_type3(TINY3)
        again = run_full_audit(ds, AuditConfig(split_config=SPLIT, train_config=FAST,
                                               seeds=(41, 42), n_mc=200))
        assert render_report(again) == render_report(tiny_report)


class TestRendering:
    def test_cell_format(self):
        from leakaudit.audit import _pct
        assert _pct(MetricSummary((0.9756,), 0.9756, 0.0079)) == "97.56±0.79"

    def test_markdown_table(self, tiny_report):
        md = render_report(tiny_report, "markdown")
        rows = [line for line in md.splitlines()
                if line.startswith("| ") and not line.startswith("| Setup")]
        assert len(rows) == 5
        assert all(line.count("±") == 2 for line in rows)
        assert "## Diagnostics" in md and "ssr" in md

    def test_json_round_trip(self, tiny_report):
        text = render_report(tiny_report, "json")
        back = load_report(text)
        assert isinstance(back, AuditReport)
        assert render_report(back, "json") == text
        assert render_report(back, "markdown") == render_report(tiny_report, "markdown")

    def test_tampered_report_rejected(self, tiny_report):
        doc = json.loads(render_report(tiny_report))
        doc["results"][0]["metrics"][1]["mean"] += 0.01
        with pytest.raises(ValueError, match="summary"):
            load_report(json.dumps(doc))
        doc = json.loads(render_report(tiny_report))
        doc["diagnostics"]["ssr"] = 0.123
        with pytest.raises(ValueError, match="diagnostics"):
            load_report(json.dumps(doc))

    def test_metric_blocks(self, tiny_report):
        doc = json.loads(render_report(tiny_report))
        block = doc["results"][0]["metrics"][1]
        assert set(block) == {"metric", "seeds", "per_seed", "mean", "std"}
        assert block["seeds"] == [41, 42]

    def test_unknown_format(self, tiny_report):
        with pytest.raises(ValueError):
            render_report(tiny_report, "html")
