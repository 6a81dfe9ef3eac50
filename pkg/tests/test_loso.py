"""
Tests for LOSO fold planning and train/val/test splitting.
"""
import numpy as np
import pytest
from pydantic import ValidationError

from posr.epochs import DataError, DuplicateSubjectError, SplitError, SubjectNotFoundError, generate_synthetic
from posr.loso import LOSOFold, make_loso_plan, make_run_pools, split_train_val
from posr.models import SynthSpec


@pytest.fixture(scope="module")
def six_subject_batch():
    """Default synthetic spec: 6 subjects x 4 sessions x 25 trials."""
    return generate_synthetic(SynthSpec())


class TestMakeLosoPlan:
    """One fold per pool member."""

    def test_eleven_subject_pool(self):
        plan = make_loso_plan(range(1, 12), eval_session=3)
        assert len(plan.folds) == 11
        assert all(len(f.source_subjects) == 10 for f in plan.folds)

    def test_minimal_pool(self):
        plan = make_loso_plan([4, 9], eval_session=0)
        assert [(f.target_subject, f.source_subjects) for f in plan.folds] == [(4, [9]), (9, [4])]

    def test_target_never_in_sources(self):
        plan = make_loso_plan(range(6), eval_session=1)
        assert all(f.target_subject not in f.source_subjects for f in plan.folds)

    def test_duplicate_subjects(self):
        with pytest.raises(DuplicateSubjectError):
            make_loso_plan([1, 2, 2], eval_session=0)

    def test_single_subject_pool(self):
        with pytest.raises(DataError):
            make_loso_plan([1], eval_session=0)

    def test_fold_rejects_target_in_sources(self):
        with pytest.raises(ValidationError):
            LOSOFold(index=0, target_subject=1, source_subjects=[1, 2], eval_session=0)


class TestSplitTrainVal:
    """Leakage-free, stratified splitting."""

    def test_no_target_leakage_and_session_isolation(self, six_subject_batch):
        plan = make_loso_plan(six_subject_batch.subjects, eval_session=3)
        for fold in plan.folds:
            split = split_train_val(six_subject_batch, fold, seed=0)
            assert fold.target_subject not in split.train.subject_ids
            assert fold.target_subject not in split.val.subject_ids
            assert np.all(split.test.subject_ids == fold.target_subject)
            assert np.all(split.test.session_ids == 3)
            assert split.test.n_trials == 25

    def test_eighty_twenty_per_subject_and_class(self, six_subject_batch):
        fold = make_loso_plan(six_subject_batch.subjects, eval_session=3).folds[0]
        split = split_train_val(six_subject_batch, fold, seed=0)
        for subject in fold.source_subjects:
            assert np.sum(split.train.subject_ids == subject) == 80
            assert np.sum(split.val.subject_ids == subject) == 20
            for label in (0, 1):
                n_train = np.sum((split.train.subject_ids == subject) & (split.train.class_labels == label))
                n_val = np.sum((split.val.subject_ids == subject) & (split.val.class_labels == label))
                assert 0.75 <= n_train / (n_train + n_val) <= 0.85

    def test_partition_is_disjoint(self, six_subject_batch):
        fold = make_loso_plan(six_subject_batch.subjects, eval_session=3).folds[2]
        split = split_train_val(six_subject_batch, fold, seed=4)
        parts = [split.train.data.reshape(split.train.n_trials, -1),
                 split.val.data.reshape(split.val.n_trials, -1),
                 split.test.data.reshape(split.test.n_trials, -1)]
        rows = [row.tobytes() for part in parts for row in part]
        assert len(rows) == len(set(rows))

    def test_seeded(self, six_subject_batch):
        fold = make_loso_plan(six_subject_batch.subjects, eval_session=3).folds[1]
        a = split_train_val(six_subject_batch, fold, seed=9)
        b = split_train_val(six_subject_batch, fold, seed=9)
        assert a.train.equals(b.train) and a.val.equals(b.val)

    def test_absent_subject(self, tiny_batch):
        fold = LOSOFold(index=0, target_subject=0, source_subjects=[1, 7], eval_session=1)
        with pytest.raises(SubjectNotFoundError):
            split_train_val(tiny_batch, fold)

    def test_missing_eval_session(self, tiny_batch):
        fold = LOSOFold(index=0, target_subject=0, source_subjects=[1, 2], eval_session=5)
        with pytest.raises(SplitError):
            split_train_val(tiny_batch, fold)


class TestMakeRunPools:
    """Distinct subject pools for repeated runs."""

    def test_full_pool(self):
        assert make_run_pools(range(6), 6, 1) == [[0, 1, 2, 3, 4, 5]]

    def test_distinct_sorted_pools(self):
        pools = make_run_pools(range(10), 3, 4, seed=1)
        assert len(pools) == 4
        assert len({tuple(p) for p in pools}) == 4
        assert all(p == sorted(p) and len(p) == 3 for p in pools)

    def test_seeded(self):
        assert make_run_pools(range(10), 3, 4, seed=1) == make_run_pools(range(10), 3, 4, seed=1)

    def test_too_many_runs(self):
        with pytest.raises(DataError):
            make_run_pools(range(3), 2, 4)

    def test_pool_too_large(self):
        with pytest.raises(DataError):
            make_run_pools(range(3), 4, 1)
