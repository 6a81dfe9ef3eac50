import logging
from typing import Optional

from posr.epochs import EpochBatch, downsample, generate_synthetic
from posr.models import SynthSpec
from posr.repositories.base import EpochRepository

logger = logging.getLogger(__name__)


class SyntheticEpochRepository(EpochRepository):
    """Generates the batch once from a SynthSpec and serves it from memory"""

    def __init__(self, spec: SynthSpec, downsample_factor: int = 1):
        self.spec = spec
        self.downsample_factor = downsample_factor
        self._batch: Optional[EpochBatch] = None

    def load(self) -> EpochBatch:
        if self._batch is None:
            batch = generate_synthetic(self.spec)
            if self.downsample_factor > 1:
                batch = downsample(batch, self.downsample_factor)
            self._batch = batch
            logger.info(f"🧪 Generated {batch.n_trials} synthetic trials ({self.describe()})")
        return self._batch

    def describe(self) -> str:
        s = self.spec
        return f"synthetic: {s.n_subjects} subjects x {s.n_sessions} sessions, seed {s.seed}"
