import logging
from pathlib import Path
from typing import Optional, Union

from posr.epoch_file import read_epochs
from posr.epochs import EpochBatch, downsample
from posr.repositories.base import EpochRepository

logger = logging.getLogger(__name__)


class FileEpochRepository(EpochRepository):
    """Reads an epoch file on first use"""

    def __init__(self, path: Union[str, Path], downsample_factor: int = 1):
        self.path = Path(path)
        self.downsample_factor = downsample_factor
        self._batch: Optional[EpochBatch] = None

    def load(self) -> EpochBatch:
        if self._batch is None:
            batch = read_epochs(self.path)
            if self.downsample_factor > 1:
                batch = downsample(batch, self.downsample_factor)
            self._batch = batch
            logger.info(f"📂 Loaded {batch.n_trials} trials from {self.path}")
        return self._batch

    def describe(self) -> str:
        return f"file: {self.path}"
