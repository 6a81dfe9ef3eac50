import logging
from pathlib import Path

from posr.commands import CONFIG_ECHO, EPOCH_FILE, EXIT_OK, ensure_out_dir
from posr.config import write_config_echo
from posr.epoch_file import write_epochs
from posr.models import RunConfig
from posr.repositories import SyntheticEpochRepository

logger = logging.getLogger(__name__)


def cmd_synth(config: RunConfig, out_dir: Path) -> int:
    """Generate synthetic epochs from config.synth and write them with a config echo."""
    out_dir = ensure_out_dir(out_dir)
    repository = SyntheticEpochRepository(config.synth, config.data.downsample_factor)
    batch = repository.load()
    path = write_epochs(batch, out_dir / EPOCH_FILE)
    write_config_echo(config, out_dir / CONFIG_ECHO)
    print(f"wrote {batch.n_trials} trials ({len(batch.subjects)} subjects, {len(batch.sessions)} sessions) to {path}")
    return EXIT_OK
