"""
Leave-one-subject-out fold machinery.

Each fold holds one subject out as the target. Source-subject trials (all
sessions) are split 8:2 into train/validation per subject and class; the
test set is the target subject's evaluation session only.
"""

import logging
import math
from typing import List, NamedTuple, Sequence

import numpy as np
from pydantic import BaseModel, Field, model_validator

from posr.epochs import DataError, DuplicateSubjectError, EpochBatch, SplitError, SubjectNotFoundError
from posr.rng import make_rng

logger = logging.getLogger(__name__)


class LOSOFold(BaseModel):
    index: int
    target_subject: int
    source_subjects: List[int]
    eval_session: int

    @model_validator(mode="after")
    def target_not_in_sources(self):
        if self.target_subject in self.source_subjects:
            raise ValueError(f"target subject {self.target_subject} appears in its own source list")
        return self


class LOSOPlan(BaseModel):
    run_id: int = 0
    subject_pool: List[int]
    folds: List[LOSOFold]
    train_fraction: float = Field(default=0.8, gt=0, lt=1)
    eval_session: int
    seed: int = 0

    @model_validator(mode="after")
    def sources_are_pool_minus_target(self):
        for fold in self.folds:
            expected = [s for s in self.subject_pool if s != fold.target_subject]
            if fold.source_subjects != expected:
                raise ValueError(f"fold {fold.index}: sources {fold.source_subjects} != pool minus target {expected}")
        return self


class FoldSplit(NamedTuple):
    train: EpochBatch
    val: EpochBatch
    test: EpochBatch


def make_loso_plan(
    subject_pool: Sequence[int],
    eval_session: int,
    seed: int = 0,
    run_id: int = 0,
    train_fraction: float = 0.8,
) -> LOSOPlan:
    """One fold per pool member, in pool order."""
    pool = [int(s) for s in subject_pool]
    if len(set(pool)) != len(pool):
        duplicates = sorted({s for s in pool if pool.count(s) > 1})
        raise DuplicateSubjectError(f"subject pool lists {duplicates} more than once")
    if len(pool) < 2:
        raise DataError(f"LOSO needs at least 2 subjects, got {len(pool)}")

    folds = [
        LOSOFold(
            index=i,
            target_subject=target,
            source_subjects=[s for s in pool if s != target],
            eval_session=eval_session,
        )
        for i, target in enumerate(pool)
    ]
    return LOSOPlan(
        run_id=run_id,
        subject_pool=pool,
        folds=folds,
        train_fraction=train_fraction,
        eval_session=eval_session,
        seed=seed,
    )


def _train_count(n: int, train_fraction: float) -> int:
    if n < 2:
        return n
    return min(max(int(math.floor(train_fraction * n + 0.5)), 1), n - 1)


def split_train_val(batch: EpochBatch, fold: LOSOFold, train_fraction: float = 0.8, seed: int = 0) -> FoldSplit:
    """
    Split a batch for one fold.

    Returns:
        (train, val, test): train/val hold only source-subject trials, split per
        subject and class with a seeded shuffle; test holds only the target's
        evaluation-session trials.

    Raises:
        SubjectNotFoundError: a fold subject has no trials in batch
        SplitError: the target has no trials in the evaluation session
    """
    present = set(batch.subjects)
    missing = [s for s in [fold.target_subject] + fold.source_subjects if s not in present]
    if missing:
        raise SubjectNotFoundError(f"fold {fold.index}: subjects {missing} absent from batch")

    rng = make_rng(seed, "split", fold.target_subject)
    train_idx: List[int] = []
    val_idx: List[int] = []
    for subject in sorted(fold.source_subjects):
        of_subject = batch.subject_ids == subject
        for label in np.unique(batch.class_labels[of_subject]):
            members = np.flatnonzero(of_subject & (batch.class_labels == label))
            shuffled = rng.permutation(members)
            n_train = _train_count(shuffled.size, train_fraction)
            train_idx.extend(shuffled[:n_train].tolist())
            val_idx.extend(shuffled[n_train:].tolist())

    test_idx = np.flatnonzero((batch.subject_ids == fold.target_subject) & (batch.session_ids == fold.eval_session))
    if test_idx.size == 0:
        raise SplitError(f"fold {fold.index}: subject {fold.target_subject} has no trials in session {fold.eval_session}")

    return FoldSplit(
        train=batch.subset(sorted(train_idx)),
        val=batch.subset(sorted(val_idx)),
        test=batch.subset(test_idx),
    )


def make_run_pools(subjects: Sequence[int], pool_size: int, n_runs: int, seed: int = 0) -> List[List[int]]:
    """Draw n_runs distinct, sorted subject pools of pool_size subjects each."""
    available = sorted({int(s) for s in subjects})
    if pool_size < 2 or pool_size > len(available):
        raise DataError(f"pool size {pool_size} must lie in [2, {len(available)}]")
    if n_runs > math.comb(len(available), pool_size):
        raise DataError(f"only {math.comb(len(available), pool_size)} distinct pools of {pool_size} exist, {n_runs} requested")
    if pool_size == len(available):
        return [available]

    rng = make_rng(seed, "run-pools")
    pools: List[List[int]] = []
    while len(pools) < n_runs:
        pool = sorted(int(s) for s in rng.choice(available, size=pool_size, replace=False))
        if pool not in pools:
            pools.append(pool)
    return pools
