"""
Tests for the fold training service.

The fast tests train a few epochs on the tiny dataset; the slow ones run the
end-to-end learnability checks on the default synthetic pool.
"""
import numpy as np
import pytest

from posr.checkpoint import load_checkpoint
from posr.epochs import generate_synthetic
from posr.loso import make_loso_plan, split_train_val
from posr.models import LossConfig, LossKind, RunConfig, SynthSpec, TrainConfig
from posr.services import training
from posr.services.training import HISTORY_HEADER, FoldTrainer, TrainingDivergedError, train_fold


@pytest.fixture
def first_fold(tiny_batch):
    return make_loso_plan(tiny_batch.subjects, eval_session=1).folds[0]


class TestFoldTrainer:
    """Training one fold of the tiny dataset."""

    def test_baseline_fold(self, fast_run_config, tiny_batch, first_fold):
        # Act
        result = train_fold(fast_run_config, tiny_batch, first_fold)

        # Assert
        assert result.record.method == "CE_clf"
        assert result.record.target_subject == first_fold.target_subject
        assert 0.0 <= result.record.accuracy <= 1.0
        assert result.record.ossr_auroc is None
        assert len(result.history) == fast_run_config.train.epochs
        assert result.checkpoint_path is None

    def test_learning_rate_follows_cosine(self, fast_run_config, tiny_batch, first_fold):
        result = train_fold(fast_run_config, tiny_batch, first_fold)
        lrs = [row.lr for row in result.history]
        assert lrs[0] == pytest.approx(0.005)
        assert lrs == sorted(lrs, reverse=True)

    def test_best_epoch_has_highest_validation_accuracy(self, fast_run_config, tiny_batch, first_fold):
        result = train_fold(fast_run_config, tiny_batch, first_fold)
        val = [row.val_accuracy for row in result.history]
        assert result.best_epoch == val.index(max(val))

    def test_hybrid_fold_reports_open_set_metrics(self, fast_run_config, tiny_batch, first_fold):
        # Act
        result = FoldTrainer(fast_run_config, LossKind.GCPL, LossKind.GCPL).train(tiny_batch, first_fold)

        # Assert
        assert result.record.method == "GCPL_clf+GCPL_ossr"
        assert 0.0 <= result.record.ossr_auroc <= 1.0
        assert 0.0 <= result.unknown_rate <= 1.0
        assert result.model.source_subjects == first_fold.source_subjects

    def test_reciprocal_history_tracks_open_space_terms(self, fast_run_config, tiny_batch, first_fold):
        result = FoldTrainer(fast_run_config, LossKind.RPL, LossKind.ARPL).train(tiny_batch, first_fold)
        assert all(row.clf_open_reg is not None and row.ossr_open_reg is not None for row in result.history)

    def test_same_seed_same_result(self, fast_run_config, tiny_batch, first_fold):
        a = train_fold(fast_run_config, tiny_batch, first_fold)
        b = train_fold(fast_run_config, tiny_batch, first_fold)
        assert a.record == b.record
        assert [r.loss for r in a.history] == [r.loss for r in b.history]

    def test_writes_checkpoint_and_history(self, tmp_path, fast_run_config, tiny_batch, first_fold):
        # Act
        result = train_fold(fast_run_config, tiny_batch, first_fold, out_dir=tmp_path)

        # Assert
        assert result.checkpoint_path == tmp_path / "fold0.posr"
        restored = load_checkpoint(result.checkpoint_path)
        for name, values in result.model.state().items():
            np.testing.assert_array_equal(restored.state()[name], values)
        lines = (tmp_path / "history_fold0.csv").read_text().splitlines()
        assert lines[0] == ",".join(HISTORY_HEADER)
        assert len(lines) == 1 + fast_run_config.train.epochs

    def test_non_finite_loss_stops_with_last_finite_checkpoint(
        self, tmp_path, monkeypatch, fast_run_config, tiny_batch, first_fold
    ):
        # Arrange: the first optimizer step poisons a weight
        real_step = training.adam_step

        def poisoned_step(params, grads, state, lr):
            real_step(params, grads, state, lr)
            params[0].values[...] = np.nan

        monkeypatch.setattr(training, "adam_step", poisoned_step)
        trainer = FoldTrainer(fast_run_config)

        # Act
        with pytest.raises(TrainingDivergedError) as excinfo:
            trainer.train(tiny_batch, first_fold, out_dir=tmp_path)

        # Assert: the saved state is the initial one, never the NaN one
        path = excinfo.value.checkpoint_path
        assert path == tmp_path / "fold0_last_finite.posr"
        initial = trainer.build(tiny_batch, first_fold).state()
        restored = load_checkpoint(path).state()
        for name, values in initial.items():
            np.testing.assert_array_equal(restored[name], values)


@pytest.mark.slow
class TestLearnability:
    """End-to-end behavior on the default six-subject synthetic pool."""

    @pytest.fixture(scope="class")
    def default_batch(self):
        return generate_synthetic(SynthSpec())

    @pytest.fixture(scope="class")
    def plan(self, default_batch):
        return make_loso_plan(default_batch.subjects, eval_session=default_batch.sessions[-1])

    def test_baseline_generalizes_to_unseen_subjects(self, default_batch, plan):
        config = RunConfig(train=TrainConfig(epochs=30), loss=LossConfig(clf_kind=LossKind.CE, alpha=0.0))
        results = [train_fold(config, default_batch, fold) for fold in plan.folds]
        assert np.mean([r.train_accuracy for r in results]) >= 0.95
        assert np.mean([r.record.accuracy for r in results]) >= 0.70

    def test_style_head_separates_unseen_subject(self, default_batch, plan):
        config = RunConfig(train=TrainConfig(epochs=30))
        trainer = FoldTrainer(config, LossKind.GCPL, LossKind.GCPL)
        results = [trainer.train(default_batch, fold) for fold in plan.folds]
        assert np.mean([r.record.ossr_auroc for r in results]) >= 0.6

    def test_open_space_term_does_not_grow(self, default_batch, plan):
        config = RunConfig(train=TrainConfig(epochs=30))
        fold = plan.folds[0]
        split = split_train_val(default_batch, fold, seed=config.train.seed)
        result = FoldTrainer(config, LossKind.RPL, LossKind.NONE).train(default_batch, fold, split=split)
        assert config.loss.gamma_reg == 0.001
        assert result.history[-1].clf_open_reg <= result.history[0].clf_open_reg
