import logging
from pathlib import Path

from posr.commands import CONFIG_ECHO, EXIT_OK, METRICS_FILE, ensure_out_dir
from posr.config import ConfigError, write_config_echo
from posr.metrics import write_metrics_csv
from posr.models import RunConfig
from posr.repositories import get_epoch_repository
from posr.services.benchmark import build_run_plans
from posr.services.training import FoldTrainer

logger = logging.getLogger(__name__)


def cmd_train(config: RunConfig, out_dir: Path) -> int:
    """Train fold loso.fold_index of the first run; writes checkpoint, history, metrics row and config echo."""
    out_dir = ensure_out_dir(out_dir)
    batch = get_epoch_repository(config.data, config.synth).load()
    plan = build_run_plans(config, batch)[0]
    if config.loso.fold_index >= len(plan.folds):
        raise ConfigError(f"loso.fold_index {config.loso.fold_index} out of range for {len(plan.folds)} folds")

    write_config_echo(config, out_dir / CONFIG_ECHO)
    result = FoldTrainer(config).train(batch, plan.folds[config.loso.fold_index], run_id=plan.run_id, out_dir=out_dir)
    write_metrics_csv([result.record], out_dir / METRICS_FILE)

    record = result.record
    line = f"{record.method} fold {record.fold} (target subject {record.target_subject}): accuracy {record.accuracy * 100:.2f}%"
    if record.ossr_auroc is not None:
        line += f", OSSR AUROC {record.ossr_auroc:.4f}"
    print(line)
    print(f"checkpoint: {result.checkpoint_path}")
    return EXIT_OK
