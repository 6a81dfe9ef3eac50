from abc import ABC, abstractmethod

from posr.epochs import EpochBatch


class EpochRepository(ABC):
    """Abstract interface for epoch storage"""

    @abstractmethod
    def load(self) -> EpochBatch:
        """Return every trial the source holds"""
        pass

    @abstractmethod
    def describe(self) -> str:
        """Short human-readable description for logs"""
        pass
