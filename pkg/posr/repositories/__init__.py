from typing import Optional

from posr.models import DataConfig, DataSource, SynthSpec
from posr.repositories.base import EpochRepository
from posr.repositories.file import FileEpochRepository
from posr.repositories.synthetic import SyntheticEpochRepository


def get_epoch_repository(data: DataConfig, synth: Optional[SynthSpec] = None) -> EpochRepository:
    """Get the epoch repository selected by data.source"""
    if data.source == DataSource.FILE:
        return FileEpochRepository(data.path, data.downsample_factor)
    return SyntheticEpochRepository(synth or SynthSpec(), data.downsample_factor)


__all__ = ["EpochRepository", "FileEpochRepository", "SyntheticEpochRepository", "get_epoch_repository"]
