import numpy as np
import pytest
from sklearn.model_selection import cross_val_score
from sklearn.linear_model import LogisticRegression

from conftest import make_meta, random_dataset, windowed_dataset
from leakaudit.datamodel import Dataset, Sample
from leakaudit.exceptions import SplitError
from leakaudit.splitters import (
    LeaveNSubjectsOut,
    Split,
    SplitConfig,
    SplitPolicy,
    ViolationKind,
    causal_subject_dependent,
    leave_n_out,
    leave_one_out,
    mixed_subject_dependent,
    verify_split,
)


def _flat(n, n_subjects=1):
    samples = [Sample(i % n_subjects, 0, i // n_subjects, [[float(i)]]) for i in range(n)]
    return Dataset(make_meta(n_subjects, 1, T=1), samples)


def _brute_leak_pairs(ds, split):
    """Independent O(n^2) interval-intersection count."""
    count = 0
    for i in split.train:
        a = ds.samples[i]
        for j in split.test:
            b = ds.samples[j]
            if a.span is None or b.span is None:
                continue
            same = (a.recording == b.recording if a.recording is not None
                    else b.recording is None and a.subject == b.subject)
            if same and max(a.span[0], b.span[0]) < min(a.span[1], b.span[1]):
                count += 1
    return count


class TestMixed:
    def test_sizes_100(self):
        s = mixed_subject_dependent(_flat(100), SplitConfig())
        assert (s.train.size, s.val.size, s.test.size) == (60, 20, 20)

    def test_sizes_5(self):
        s = mixed_subject_dependent(_flat(5), SplitConfig())
        assert (s.train.size, s.val.size, s.test.size) == (3, 1, 1)

    def test_deterministic(self):
        ds = _flat(50, 3)
        assert mixed_subject_dependent(ds, SplitConfig(seed=9)) == \
            mixed_subject_dependent(ds, SplitConfig(seed=9))
        assert mixed_subject_dependent(ds, SplitConfig(seed=9)) != \
            mixed_subject_dependent(ds, SplitConfig(seed=10))

    def test_subjects_shared_across_sets(self):
        ds = _flat(60, 2)
        for seed in range(100):
            s = mixed_subject_dependent(ds, SplitConfig(seed=seed))
            shared = np.intersect1d(ds.subjects[s.train], ds.subjects[s.test])
            assert shared.size >= 1

    def test_too_small(self):
        with pytest.raises(SplitError):
            mixed_subject_dependent(_flat(2), SplitConfig())


class TestCausal:
    def test_single_subject(self):
        s = causal_subject_dependent(_flat(10), SplitConfig())
        assert s.train.tolist() == list(range(6))
        assert s.val.tolist() == [6, 7] and s.test.tolist() == [8, 9]

    def test_two_subjects(self):
        ds = _flat(20, 2)
        s = causal_subject_dependent(ds, SplitConfig())
        assert (s.train.size, s.val.size, s.test.size) == (12, 4, 4)
        for z in (0, 1):
            t = ds.t_indices
            sel = lambda idx: t[idx[ds.subjects[idx] == z]]
            assert sel(s.train).max() < sel(s.val).min() <= sel(s.val).max() < sel(s.test).min()

    def test_orders_by_t_index_not_position(self):
        samples = [Sample(0, 0, t, [[float(t)]]) for t in [9, 3, 0, 7, 5, 1, 8, 2, 6, 4]]
        ds = Dataset(make_meta(1, 1, T=1), samples)
        s = causal_subject_dependent(ds, SplitConfig())
        assert sorted(ds.t_indices[s.test].tolist()) == [8, 9]
        assert verify_split(ds, s).ok


class TestLeaveNOut:
    def test_counts(self):
        ds = _flat(50, 5)
        s = leave_n_out(ds, SplitConfig(n_val_subjects=1, n_test_subjects=1))
        sets = [set(ds.subjects[idx].tolist()) for idx in (s.train, s.val, s.test)]
        assert [len(x) for x in sets] == [3, 1, 1]
        assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])

    def test_fractions(self):
        ds = _flat(100, 10)
        s = leave_n_out(ds, SplitConfig())
        assert [np.unique(ds.subjects[i]).size for i in (s.train, s.val, s.test)] == [6, 2, 2]

    def test_explicit_lists(self):
        ds = _flat(80, 8)
        s = leave_n_out(ds, SplitConfig(val_subjects=(1,), test_subjects=(4, 5)))
        assert set(ds.subjects[s.test].tolist()) == {4, 5}
        assert set(ds.subjects[s.val].tolist()) == {1}

    def test_no_training_subjects(self):
        with pytest.raises(SplitError, match="no training"):
            leave_n_out(_flat(4, 2), SplitConfig(n_val_subjects=1, n_test_subjects=1))

    def test_stratified_eval_sets_cover_classes(self):
        samples = [Sample(z, z % 3, j, [[0.0]]) for z in range(20) for j in range(3)]
        ds = Dataset(make_meta(20, 3, T=1), samples)
        labels = {z: z % 3 for z in range(20)}
        for seed in range(30):
            s = leave_n_out(ds, SplitConfig(seed=seed), subject_labels=labels)
            assert set(ds.labels[s.test].tolist()) == {0, 1, 2}
            assert set(ds.labels[s.val].tolist()) == {0, 1, 2}
            assert verify_split(ds, s).ok

    def test_cv_adapter(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((60, 3))
        y = np.arange(60) % 2
        groups = np.repeat(np.arange(6), 10)
        cv = LeaveNSubjectsOut(n_test_subjects=2, n_repeats=3)
        for train, test in cv.split(X, y, groups):
            assert not set(groups[train]) & set(groups[test])
            assert np.unique(groups[test]).size == 2
        assert len(cross_val_score(LogisticRegression(), X, y, groups=groups, cv=cv)) == 3


class TestLeaveOneOut:
    def test_folds(self):
        ds = _flat(30, 3)
        folds = leave_one_out(ds)
        assert len(folds) == 3
        assert [set(ds.subjects[f.test].tolist()) for f in folds] == [{0}, {1}, {2}]
        assert all(f.val.size == 0 for f in folds)
        union = np.concatenate([f.test for f in folds])
        assert sorted(union.tolist()) == list(range(30))

    def test_single_subject(self):
        with pytest.raises(SplitError):
            leave_one_out(_flat(5))


class TestVerify:
    def test_leave_n_out_clean(self):
        ds = _flat(50, 5)
        assert verify_split(ds, leave_n_out(ds, SplitConfig(n_val_subjects=1,
                                                             n_test_subjects=1))).violations == ()

    def test_subject_in_train_and_test(self):
        ds = _flat(6, 2)
        split = Split([0, 2], [1], [4, 3], SplitPolicy.SubjectExclusive)
        kinds = [v.kind for v in verify_split(ds, split).violations]
        assert kinds == [ViolationKind.SubjectInTrainAndEval] * 2

    def test_one_subject_violation(self):
        ds = _flat(9, 3)  # subjects 0,1,2 repeating
        split = Split([0, 1, 3, 4], [2], [6], SplitPolicy.SubjectExclusive)
        report = verify_split(ds, split)
        assert [v.kind for v in report.violations] == [ViolationKind.SubjectInTrainAndEval]
        assert "s0" in report.violations[0].detail

    def test_index_overlap(self):
        split = Split([0, 1], [1], [2], SplitPolicy.MixedSample)
        assert verify_split(_flat(3), split).violations[0].kind is ViolationKind.IndexOverlap

    def test_temporal_order(self):
        split = Split([0, 5], [1], [2], SplitPolicy.CausalPerSubject)
        report = verify_split(_flat(6), split)
        assert [v.kind for v in report.violations] == [ViolationKind.TemporalOrderBroken]

    def test_overlap_leak_against_brute_force(self):
        ds = windowed_dataset(n_subjects=1, L=100, window_len=20, overlap=0.8)
        assert len(ds) == 21
        for seed in range(20):
            split = mixed_subject_dependent(ds, SplitConfig(seed=seed))
            report = verify_split(ds, split)
            assert report.leak_pair_count == _brute_leak_pairs(ds, split) > 0
            assert report.ok

    def test_causal_no_overlap_has_no_leak(self):
        ds = windowed_dataset(n_subjects=3, overlap=0.0)
        report = verify_split(ds, causal_subject_dependent(ds, SplitConfig()))
        assert report.leak_pair_count == 0 and report.ok

    def test_missing_spans_noted(self):
        report = verify_split(_flat(10), mixed_subject_dependent(_flat(10), SplitConfig()))
        assert report.leak_pair_count == 0
        assert any("no span" in n for n in report.notes)

    def test_random_leak_counts(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            ds = random_dataset(rng, spans=True, min_per_subject=5)
            if len(ds) < 5:
                continue
            split = mixed_subject_dependent(ds, SplitConfig(seed=int(rng.integers(1000))))
            assert verify_split(ds, split).leak_pair_count == _brute_leak_pairs(ds, split)


class TestInvariants:
    def test_random_datasets(self):
        rng = np.random.default_rng(99)
        checked = 0
        for _ in range(300):
            ds = random_dataset(rng, min_subjects=3, min_per_subject=5, max_per_subject=15)
            S = ds.meta.n_subjects
            n_val = int(rng.integers(0, S - 1))
            n_test = int(rng.integers(1, S - n_val))
            cfg = SplitConfig(seed=int(rng.integers(2**31)), n_val_subjects=n_val,
                              n_test_subjects=n_test)
            splits = [mixed_subject_dependent(ds, cfg), causal_subject_dependent(ds, cfg),
                      leave_n_out(ds, cfg)]
            for s in splits:
                assert verify_split(ds, s).violations == ()
                assert s.train.size + s.val.size + s.test.size == len(ds)
            ex = splits[2]
            subs = [set(ds.subjects[i].tolist()) for i in (ex.train, ex.val, ex.test)]
            assert not (subs[0] & subs[1] or subs[0] & subs[2] or subs[1] & subs[2])
            assert splits[0] == mixed_subject_dependent(ds, cfg)
            assert splits[2] == leave_n_out(ds, cfg)
            checked += 1
        assert checked == 300

    def test_json_round_trip(self, tmp_path):
        ds = _flat(40, 4)
        s = leave_n_out(ds, SplitConfig(n_val_subjects=1, n_test_subjects=1, seed=3))
        s.save(tmp_path / "s.json")
        assert Split.load(tmp_path / "s.json") == s

    def test_config_validation(self):
        with pytest.raises(SplitError):
            SplitConfig(fractions=(0.5, 0.5, 0.5))
        with pytest.raises(SplitError):
            SplitConfig(n_val_subjects=1)
        with pytest.raises(SplitError):
            SplitConfig.from_dict({"bogus": 1})
