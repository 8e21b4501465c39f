import numpy as np
import pytest

from leakaudit.audit import run_setup_experiment
from leakaudit.classifier import TrainConfig
from leakaudit.datamodel import DatasetKind, classify_dataset_kind
from leakaudit.exceptions import ConfigError
from leakaudit.protocols import EvaluationSetup
from leakaudit.splitters import SplitConfig, causal_subject_dependent, verify_split
from leakaudit.synthgen import (
    SynthType2Config,
    SynthType3Config,
    generate_type2,
    generate_type3,
    parse_synth_spec,
    reconstruct_check,
)


def _random_type3(rng):
    return SynthType3Config(
        n_subjects=int(rng.integers(2, 7)), n_classes=int(rng.integers(1, 4)),
        samples_per_subject=int(rng.integers(1, 6)), n_timestamps=int(rng.integers(1, 20)),
        n_channels=int(rng.integers(1, 4)), amp_disease=float(rng.uniform(0, 3)),
        amp_subject=float(rng.uniform(0, 3)), amp_noise=float(rng.uniform(0, 3)),
        phase_jitter=bool(rng.random() < 0.5), smooth_width=int(rng.choice([1, 3, 5])),
        seed=int(rng.integers(10_000)))


class TestType3:
    def test_round_robin(self):
        ds, _ = generate_type3(SynthType3Config(n_subjects=4, n_classes=2, samples_per_subject=10,
                                                n_timestamps=32, n_channels=2))
        assert len(ds) == 40 and ds.X.shape == (40, 32, 2)
        assert {z: v for z, v in ds.subject_labels().items()} == {0: {0}, 1: {1}, 2: {0}, 3: {1}}

    def test_subject_only_samples_identical(self):
        cfg = SynthType3Config(n_subjects=3, samples_per_subject=5, n_timestamps=8,
                               amp_disease=0, amp_noise=0, phase_jitter=False)
        ds, _ = generate_type3(cfg)
        for z in range(3):
            X = ds.X[ds.subjects == z]
            assert all(np.array_equal(X[0], x) for x in X)
        assert not np.array_equal(ds.X[ds.subjects == 0][0], ds.X[ds.subjects == 1][0])

    def test_class_only_samples_identical(self):
        cfg = SynthType3Config(n_subjects=6, samples_per_subject=3, n_timestamps=8,
                               amp_subject=0, amp_noise=0, phase_jitter=False)
        ds, _ = generate_type3(cfg)
        for k in range(3):
            X = ds.X[ds.labels == k]
            assert all(np.array_equal(X[0], x) for x in X)

    def test_deterministic_and_seeded(self):
        cfg = SynthType3Config(n_subjects=3, samples_per_subject=4, n_timestamps=8)
        a, _ = generate_type3(cfg)
        b, _ = generate_type3(cfg)
        assert a == b
        c, _ = generate_type3(SynthType3Config(n_subjects=3, samples_per_subject=4,
                                               n_timestamps=8, seed=1))
        assert not np.array_equal(a.X, c.X)

    def test_templates_differ_across_subjects(self):
        _, parts = generate_type3(SynthType3Config(n_subjects=10, samples_per_subject=1,
                                                   n_timestamps=64, smooth_width=1),
                                  return_components=True)
        flat = parts.subject.reshape(10, -1)
        corr = np.corrcoef(flat)
        assert np.abs(corr[np.triu_indices(10, 1)]).max() < 0.5

    def test_always_type3(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            cfg = _random_type3(rng)
            if cfg.n_classes < 2:
                continue
            ds, _ = generate_type3(cfg)
            assert classify_dataset_kind(ds) is DatasetKind.TypeIII

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SynthType3Config(n_subjects=0)
        with pytest.raises(ConfigError):
            SynthType3Config(smooth_width=4)
        with pytest.raises(ConfigError):
            SynthType3Config.from_dict({"subjects": 3})


class TestReconstruct:
    def test_default(self):
        ds, parts = generate_type3(SynthType3Config(samples_per_subject=5),
                                   return_components=True)
        assert reconstruct_check(ds, parts)

    def test_perturbed_noise(self):
        ds, parts = generate_type3(SynthType3Config(n_subjects=3, samples_per_subject=2),
                                   return_components=True)
        parts.noise[1, 2, 0] += 1e-3
        assert not reconstruct_check(ds, parts)

    def test_random_configs(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            ds, parts = generate_type3(_random_type3(rng), return_components=True)
            assert reconstruct_check(ds, parts)


class TestType2:
    def test_window_count(self):
        ds = generate_type2(SynthType2Config(n_subjects=3, segments_per_subject=4))
        per_subject = np.bincount(ds.subjects)
        assert per_subject.tolist() == [4 * 21] * 3
        assert classify_dataset_kind(ds) is DatasetKind.TypeII
        starts = sorted(s.span[0] for s in ds.samples if s.subject == 0)
        assert starts[:21] == list(range(0, 81, 4))
        assert starts[21] == 100

    def test_no_overlap_no_leak(self):
        ds = generate_type2(SynthType2Config(n_subjects=3, overlap=0.0))
        assert np.bincount(ds.subjects).tolist() == [50] * 3
        report = verify_split(ds, causal_subject_dependent(ds, SplitConfig()))
        assert report.leak_pair_count == 0 and report.ok

    def test_windows_never_straddle_segments(self):
        ds = generate_type2(SynthType2Config(n_subjects=2, segments_per_subject=5))
        for s in ds.samples:
            assert int(s.span[0]) // 100 == (int(s.span[1]) - 1) // 100

    def test_deterministic(self):
        cfg = SynthType2Config(n_subjects=2, segments_per_subject=3)
        assert generate_type2(cfg) == generate_type2(cfg)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SynthType2Config(window_len=200)
        with pytest.raises(ConfigError):
            SynthType2Config(overlap=1.0)


class TestParse:
    def test_type3_aliases(self):
        assert parse_synth_spec("S=20,K=3,m=200,T=64,C=4,as=0") == {
            "n_subjects": 20, "n_classes": 3, "samples_per_subject": 200,
            "n_timestamps": 64, "n_channels": 4, "amp_subject": 0.0}

    def test_type2_aliases(self):
        out = parse_synth_spec("S=4,T=10,L=50,segments=3,overlap=0.5", "type2")
        assert out == {"n_subjects": 4, "window_len": 10, "segment_len": 50,
                       "segments_per_subject": 3, "overlap": 0.5}

    def test_errors(self):
        with pytest.raises(ConfigError):
            parse_synth_spec("Q=1")
        with pytest.raises(ConfigError):
            parse_synth_spec("S")


def _mean_f1(cfg, setup):
    ds, _ = generate_type3(cfg)
    result = run_setup_experiment(ds, setup, SplitConfig(n_val_subjects=3, n_test_subjects=3),
                                  TrainConfig(epochs=30, hidden_width=32), n_mc=200)
    return result.macro_f1.mean


class TestMonotonicity:
    base = dict(n_subjects=12, samples_per_subject=40, n_timestamps=16, n_channels=2)

    def test_subject_amplitude_raises_discrimination(self):
        scores = [_mean_f1(SynthType3Config(**self.base, amp_subject=a), EvaluationSetup.SubDisc)
                  for a in (0.0, 0.5, 2.0)]
        assert scores[0] < scores[1] < scores[2]

    def test_disease_amplitude_raises_cross_subject(self):
        scores = [_mean_f1(SynthType3Config(**self.base, amp_disease=a, amp_subject=0.5),
                           EvaluationSetup.SubIndepLNO) for a in (0.0, 0.5, 2.0)]
        assert scores[0] < scores[1] < scores[2]
