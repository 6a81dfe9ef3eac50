"""
Leave-one-subject-out benchmark runner.

Every method in the run config is trained on the same runs and folds. Folds
are independent work units executed on a thread pool; results are collected
in submission order so the metrics CSV does not depend on scheduling.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

from pydantic import BaseModel, Field

from posr.epochs import EpochBatch, SubjectNotFoundError
from posr.losses import method_name, parse_method
from posr.loso import LOSOFold, LOSOPlan, make_loso_plan, make_run_pools
from posr.metrics import aggregate_runs
from posr.models import LossKind, MethodAggregate, MetricsRecord, RunConfig
from posr.repositories import EpochRepository
from posr.services.training import FoldResult, FoldTrainer

logger = logging.getLogger(__name__)


class FoldFailure(BaseModel):
    run_id: int
    fold: int
    target_subject: int
    method: str
    error_type: str
    error: str


class BenchmarkResult(BaseModel):
    records: List[MetricsRecord] = Field(default_factory=list)
    failures: List[FoldFailure] = Field(default_factory=list)
    aggregates: Dict[str, MethodAggregate] = Field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return bool(self.failures)


class FoldTask(NamedTuple):
    method: Tuple[LossKind, LossKind]
    plan: LOSOPlan
    fold: LOSOFold


def build_run_plans(config: RunConfig, batch: EpochBatch) -> List[LOSOPlan]:
    """
    One plan per run. Runs draw distinct pools when loso.pool_size is set;
    otherwise they share the pool and differ by seed.

    Raises:
        SubjectNotFoundError: a pool subject has no trials in batch
    """
    loso, seed = config.loso, config.train.seed
    pool = loso.pool or batch.subjects
    missing = sorted(set(pool) - set(batch.subjects))
    if missing:
        raise SubjectNotFoundError(f"pool subjects {missing} have no trials")
    eval_session = loso.eval_session if loso.eval_session is not None else batch.sessions[-1]

    if loso.pool_size is not None:
        pools = make_run_pools(pool, loso.pool_size, loso.n_runs, seed=seed)
    else:
        pools = [list(pool)] * loso.n_runs
    return [
        make_loso_plan(
            run_pool,
            eval_session,
            seed=(seed + r) % 2**64,
            run_id=loso.run_id + r,
            train_fraction=loso.train_fraction,
        )
        for r, run_pool in enumerate(pools)
    ]


class LOSOBenchmark:
    """Runs every (method, run, fold) combination of a run config."""

    def __init__(self, config: RunConfig, repository: EpochRepository, out_dir: Optional[Union[str, Path]] = None):
        self.config = config
        self.repository = repository
        self.out_dir = Path(out_dir) if out_dir is not None else None

    def methods(self) -> List[Tuple[LossKind, LossKind]]:
        if self.config.loso.methods:
            return [parse_method(name) for name in self.config.loso.methods]
        return [(self.config.loss.clf_kind, self.config.loss.ossr_kind)]

    def plans(self, batch: EpochBatch) -> List[LOSOPlan]:
        return build_run_plans(self.config, batch)

    def _run_task(self, batch: EpochBatch, task: FoldTask) -> FoldResult:
        config = self.config.model_copy(
            update={"train": self.config.train.model_copy(update={"seed": task.plan.seed})}
        )
        trainer = FoldTrainer(config, *task.method)
        out_dir = None
        if self.out_dir is not None:
            out_dir = self.out_dir / trainer.method / f"run{task.plan.run_id}"
        return trainer.train(batch, task.fold, run_id=task.plan.run_id, out_dir=out_dir)

    def run(self, parallel: int = 1) -> BenchmarkResult:
        """Train every fold; a failing fold is recorded and the others continue."""
        batch = self.repository.load()
        tasks = [
            FoldTask(method, plan, fold)
            for method in self.methods()
            for plan in self.plans(batch)
            for fold in plan.folds
        ]
        logger.info(f"🚀 LOSO benchmark: {len(tasks)} folds on {max(1, parallel)} worker(s), {self.repository.describe()}")

        result = BenchmarkResult()
        with ThreadPoolExecutor(max_workers=max(1, parallel)) as pool:
            futures = [pool.submit(self._run_task, batch, task) for task in tasks]
            for task, future in zip(tasks, futures):
                try:
                    result.records.append(future.result().record)
                except Exception as e:
                    name = method_name(*task.method)
                    logger.error(f"❌ Fold {task.fold.index} of run {task.plan.run_id} ({name}) failed: {e}")
                    result.failures.append(FoldFailure(
                        run_id=task.plan.run_id,
                        fold=task.fold.index,
                        target_subject=task.fold.target_subject,
                        method=name,
                        error_type=type(e).__name__,
                        error=str(e),
                    ))

        if result.records:
            result.aggregates = aggregate_runs(result.records)
        logger.info(f"🏁 {len(result.records)} folds finished, {len(result.failures)} failed")
        return result
