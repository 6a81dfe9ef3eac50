"""
Training service for one LOSO fold.

Handles minibatch iteration, the hybrid objective, Adam with a per-epoch
cosine learning rate, best-validation model selection, divergence handling
and the fold's evaluation (target-subject accuracy and open-set AUROC of the
style head).
"""

import csv
import logging
import math
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from posr.checkpoint import save_checkpoint
from posr.encoder import DualEncoderModel, build_model, predict_class, recognize_subject, style_scores
from posr.epochs import EpochBatch
from posr.losses import head_loss, hybrid_loss, method_name
from posr.loso import FoldSplit, LOSOFold, split_train_val
from posr.metrics import accuracy, auroc
from posr.models import EpochStats, HeadConfig, LossConfig, LossKind, MetricsRecord, RunConfig
from posr.optim import AdamState, CosineSchedule, adam_step, cosine_lr
from posr.rng import make_rng
from posr.tensor import backward

logger = logging.getLogger(__name__)

EVAL_CHUNK = 256
HISTORY_HEADER = ["epoch", "lr", "loss", "train_accuracy", "val_accuracy", "clf_open_reg", "ossr_open_reg"]


class TrainingError(Exception):
    """Base exception for training errors."""
    pass


class TrainingDivergedError(TrainingError):
    """Raised when the loss becomes non-finite; checkpoint_path holds the last finite state."""

    def __init__(self, message: str, checkpoint_path: Optional[Path] = None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class FoldResult(BaseModel):
    """Outcome of one trained fold."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    record: MetricsRecord
    history: List[EpochStats]
    best_epoch: int
    train_accuracy: float
    unknown_rate: Optional[float] = Field(default=None, description="Target trials flagged UNKNOWN by the style head")
    checkpoint_path: Optional[Path] = None
    model: Any = Field(default=None, exclude=True)


def _chunked(fn: Callable[[np.ndarray], Any], data: np.ndarray) -> List[Any]:
    return [fn(data[start:start + EVAL_CHUNK]) for start in range(0, data.shape[0], EVAL_CHUNK)]


def evaluate_accuracy(model: DualEncoderModel, batch: EpochBatch) -> float:
    predictions = np.concatenate(_chunked(lambda d: predict_class(model, d), batch.data))
    return accuracy(predictions, batch.class_labels)


def open_set_scores(model: DualEncoderModel, batch: EpochBatch) -> np.ndarray:
    """Style-head unknown-ness score per trial (higher means less like any source subject)."""
    return np.concatenate([scores for _, scores in _chunked(lambda d: style_scores(model, d), batch.data)])


def write_history_csv(history: List[EpochStats], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HISTORY_HEADER)
        for row in history:
            writer.writerow([
                row.epoch, repr(row.lr), repr(row.loss), repr(row.train_accuracy), repr(row.val_accuracy),
                "" if row.clf_open_reg is None else repr(row.clf_open_reg),
                "" if row.ossr_open_reg is None else repr(row.ossr_open_reg),
            ])
    return path


class FoldTrainer:
    """
    Trains the dual-encoder model on one fold.

    The objective per minibatch is L = L_clf + alpha * L_ossr, where L_ossr
    is computed on the style head with source-subject indices as labels and
    is skipped when loss.ossr_kind is NONE.
    """

    def __init__(self, config: RunConfig, clf_kind: Optional[LossKind] = None, ossr_kind: Optional[LossKind] = None):
        self.config = config
        updates: Dict[str, LossKind] = {}
        if clf_kind is not None:
            updates["clf_kind"] = LossKind(clf_kind)
        if ossr_kind is not None:
            updates["ossr_kind"] = LossKind(ossr_kind)
        self.loss_config: LossConfig = LossConfig.model_validate({**config.loss.model_dump(), **updates})

    @property
    def method(self) -> str:
        return method_name(self.loss_config.clf_kind, self.loss_config.ossr_kind)

    def build(self, batch: EpochBatch, fold: LOSOFold) -> DualEncoderModel:
        arch = self.config.model
        n_classes = int(batch.class_labels.max()) + 1
        semantic = HeadConfig.for_loss(self.loss_config.clf_kind, n_classes, arch.embed_dim)
        style = None
        if self.loss_config.ossr_kind != LossKind.NONE:
            style = HeadConfig.for_loss(self.loss_config.ossr_kind, len(fold.source_subjects), arch.embed_dim)
        return build_model(
            arch.backbone_for(batch.n_channels, batch.n_samples),
            semantic,
            style,
            seed=self.config.train.seed,
            loss_config=self.loss_config,
            source_subjects=fold.source_subjects,
        )

    def _objective(self, model: DualEncoderModel, data: np.ndarray, classes: np.ndarray, subjects: np.ndarray):
        semantic, style = model.forward(data)
        l_clf, clf_reg = head_loss(model.semantic_head, semantic, classes, self.loss_config)
        l_ossr, ossr_reg = None, None
        if style is not None:
            l_ossr, ossr_reg = head_loss(model.style_head, style, subjects, self.loss_config)
        return hybrid_loss(l_clf, l_ossr, self.loss_config.alpha), clf_reg, ossr_reg

    def _diverged(self, model: DualEncoderModel, last_finite: Dict[str, np.ndarray], epoch: int,
                  fold: LOSOFold, out_dir: Optional[Path]) -> TrainingDivergedError:
        model.load_state(last_finite)
        path = None
        if out_dir is not None:
            path = save_checkpoint(model, out_dir / f"fold{fold.index}_last_finite.posr")
        logger.error(f"💥 Fold {fold.index} ({self.method}) diverged in epoch {epoch}")
        return TrainingDivergedError(f"fold {fold.index}: non-finite loss in epoch {epoch}", checkpoint_path=path)

    def train(
        self,
        batch: EpochBatch,
        fold: LOSOFold,
        run_id: int = 0,
        out_dir: Optional[Union[str, Path]] = None,
        split: Optional[FoldSplit] = None,
    ) -> FoldResult:
        """
        Train and evaluate one fold.

        Args:
            batch: Every trial of the fold's subjects
            fold: Target and source subjects
            run_id: Recorded in the metrics row
            out_dir: Where the checkpoint and history go; None keeps everything in memory
            split: Precomputed split; derived from batch when None

        Raises:
            TrainingDivergedError: the loss became non-finite
        """
        train_cfg = self.config.train
        out_dir = Path(out_dir) if out_dir is not None else None
        split = split or split_train_val(batch, fold, self.config.loso.train_fraction, seed=train_cfg.seed)
        if split.train.n_trials == 0:
            raise TrainingError(f"fold {fold.index}: no training trials")

        model = self.build(batch, fold)
        params = model.parameters()
        subject_index = {s: i for i, s in enumerate(fold.source_subjects)}
        train_subjects = np.array([subject_index[int(s)] for s in split.train.subject_ids], dtype=np.int64)

        state = AdamState(beta1=train_cfg.adam_beta1, beta2=train_cfg.adam_beta2, epsilon=train_cfg.adam_eps)
        schedule = CosineSchedule(eta_max=train_cfg.lr, eta_min=train_cfg.lr_min, total_steps=train_cfg.epochs)
        shuffle_rng = make_rng(train_cfg.seed, "minibatches", run_id, fold.index)

        logger.info(
            f"🏋️ Fold {fold.index}: target subject {fold.target_subject}, {self.method}, "
            f"{split.train.n_trials}/{split.val.n_trials}/{split.test.n_trials} train/val/test trials"
        )

        history: List[EpochStats] = []
        best_state = model.state()
        best_val, best_epoch = -1.0, 0
        last_finite = model.state()
        n_train = split.train.n_trials
        for epoch in range(train_cfg.epochs):
            lr = cosine_lr(schedule, epoch)
            order = shuffle_rng.permutation(n_train)
            losses: List[float] = []
            clf_regs: List[float] = []
            ossr_regs: List[float] = []
            for start in range(0, n_train, train_cfg.batch_size):
                idx = order[start:start + train_cfg.batch_size]
                loss, clf_reg, ossr_reg = self._objective(
                    model, split.train.data[idx], split.train.class_labels[idx], train_subjects[idx]
                )
                value = loss.item()
                if not math.isfinite(value):
                    raise self._diverged(model, last_finite, epoch, fold, out_dir)
                grads = backward(loss, params)
                adam_step(params, grads, state, lr)
                losses.append(value)
                if clf_reg is not None:
                    clf_regs.append(clf_reg.item())
                if ossr_reg is not None:
                    ossr_regs.append(ossr_reg.item())

            if not all(np.all(np.isfinite(p.values)) for p in params):
                raise self._diverged(model, last_finite, epoch, fold, out_dir)
            last_finite = model.state()

            train_acc = evaluate_accuracy(model, split.train)
            val_acc = evaluate_accuracy(model, split.val) if split.val.n_trials else train_acc
            stats = EpochStats(
                epoch=epoch,
                lr=lr,
                loss=float(np.mean(losses)),
                train_accuracy=train_acc,
                val_accuracy=val_acc,
                clf_open_reg=float(np.mean(clf_regs)) if clf_regs else None,
                ossr_open_reg=float(np.mean(ossr_regs)) if ossr_regs else None,
            )
            history.append(stats)
            logger.debug(
                f"fold {fold.index} epoch {epoch}: lr={lr:.6f} loss={stats.loss:.4f} "
                f"train={train_acc:.3f} val={val_acc:.3f}"
            )
            if val_acc > best_val:
                best_val, best_epoch = val_acc, epoch
                best_state = model.state()

        model.load_state(best_state)
        return self._evaluate(model, split, fold, run_id, history, best_epoch, out_dir)

    def _evaluate(
        self,
        model: DualEncoderModel,
        split: FoldSplit,
        fold: LOSOFold,
        run_id: int,
        history: List[EpochStats],
        best_epoch: int,
        out_dir: Optional[Path],
    ) -> FoldResult:
        test_acc = evaluate_accuracy(model, split.test)
        ossr_auroc, unknown_rate = self._open_set(model, split)

        record = MetricsRecord(
            run_id=run_id,
            fold=fold.index,
            target_subject=fold.target_subject,
            method=self.method,
            accuracy=test_acc,
            ossr_auroc=ossr_auroc,
            seed=self.config.train.seed,
            epochs=self.config.train.epochs,
        )
        checkpoint_path = None
        if out_dir is not None:
            checkpoint_path = save_checkpoint(model, out_dir / f"fold{fold.index}.posr")
            write_history_csv(history, out_dir / f"history_fold{fold.index}.csv")

        auroc_text = f", OSSR AUROC {ossr_auroc:.3f}" if ossr_auroc is not None else ""
        logger.info(
            f"✅ Fold {fold.index} ({self.method}): target accuracy {test_acc:.3f}{auroc_text} "
            f"(best epoch {best_epoch})"
        )
        return FoldResult(
            record=record,
            history=history,
            best_epoch=best_epoch,
            train_accuracy=history[best_epoch].train_accuracy,
            unknown_rate=unknown_rate,
            checkpoint_path=checkpoint_path,
            model=model,
        )

    def _open_set(self, model: DualEncoderModel, split: FoldSplit) -> Tuple[Optional[float], Optional[float]]:
        """Source validation trials are the known class, target test trials the unknown one."""
        head = model.style_head
        if head is None or head.prototypes is None or split.val.n_trials == 0:
            return None, None
        known = open_set_scores(model, split.val)
        unknown = open_set_scores(model, split.test)
        flagged = recognize_subject(model, split.test, self.config.train.threshold_for(head.prototypes.role))
        return auroc(known, unknown), float(np.mean(flagged.subjects < 0))


def train_fold(
    config: RunConfig,
    batch: EpochBatch,
    fold: LOSOFold,
    run_id: int = 0,
    out_dir: Optional[Union[str, Path]] = None,
) -> FoldResult:
    """Train one fold with the method given by config.loss."""
    return FoldTrainer(config).train(batch, fold, run_id=run_id, out_dir=out_dir)
