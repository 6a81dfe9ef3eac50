"""
EEG epoch batches, synthetic multi-subject data and boxcar downsampling.

Synthetic trials follow

    x[s, c](ch, t) = A * g_c(ch) * sin(2*pi*f_c*t/fs + phase) + B_s(ch) + noise

where g_c lateralizes amplitude to the channel group of class c, B_s is a
per-subject per-channel offset fixed across that subject's trials, the phase
is drawn per trial and the noise is i.i.d. Gaussian. Samples are rounded to
32-bit precision so they survive an epoch-file round trip unchanged.
"""

import logging
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from posr.models import SynthSpec
from posr.rng import make_rng

logger = logging.getLogger(__name__)


class DataError(Exception):
    """Base exception for data preparation errors."""
    pass


class SubjectNotFoundError(DataError):
    """Raised when a fold names a subject absent from the batch."""
    pass


class DuplicateSubjectError(DataError):
    """Raised when a subject pool lists a subject twice."""
    pass


class SplitError(DataError):
    """Raised when a fold cannot be split into train/val/test."""
    pass


class EpochBatch(BaseModel):
    """Trials [n_trials x n_channels x n_samples] with class, subject and session labels."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    data: np.ndarray
    class_labels: np.ndarray
    subject_ids: np.ndarray
    session_ids: np.ndarray
    fs_hz: float = Field(..., gt=0)

    @field_validator("data", mode="before")
    @classmethod
    def as_trials(cls, v):
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"data must be [trials x channels x samples], got shape {arr.shape}")
        return arr

    @field_validator("class_labels", "subject_ids", "session_ids", mode="before")
    @classmethod
    def as_label_vector(cls, v):
        arr = np.asarray(v, dtype=np.int64).reshape(-1)
        if arr.size and arr.min() < 0:
            raise ValueError("labels and ids must be non-negative")
        return arr

    @model_validator(mode="after")
    def validate_lengths(self):
        n = self.data.shape[0]
        for name in ("class_labels", "subject_ids", "session_ids"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} entries for {n} trials")
        return self

    @property
    def n_trials(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_samples(self) -> int:
        return self.data.shape[2]

    @property
    def subjects(self) -> List[int]:
        return sorted(int(s) for s in np.unique(self.subject_ids))

    @property
    def sessions(self) -> List[int]:
        return sorted(int(s) for s in np.unique(self.session_ids))

    def subset(self, indices: Sequence[int]) -> "EpochBatch":
        idx = np.asarray(indices, dtype=np.int64)
        return EpochBatch(
            data=self.data[idx],
            class_labels=self.class_labels[idx],
            subject_ids=self.subject_ids[idx],
            session_ids=self.session_ids[idx],
            fs_hz=self.fs_hz,
        )

    @classmethod
    def concat(cls, batches: Sequence["EpochBatch"]) -> "EpochBatch":
        if not batches:
            raise DataError("cannot concatenate zero batches")
        rates = {b.fs_hz for b in batches}
        if len(rates) != 1:
            raise DataError(f"cannot concatenate batches with sampling rates {sorted(rates)}")
        return cls(
            data=np.concatenate([b.data for b in batches]),
            class_labels=np.concatenate([b.class_labels for b in batches]),
            subject_ids=np.concatenate([b.subject_ids for b in batches]),
            session_ids=np.concatenate([b.session_ids for b in batches]),
            fs_hz=batches[0].fs_hz,
        )

    def equals(self, other: "EpochBatch") -> bool:
        """Bit-exact comparison of samples and labels."""
        return (
            self.fs_hz == other.fs_hz
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
            and np.array_equal(self.class_labels, other.class_labels)
            and np.array_equal(self.subject_ids, other.subject_ids)
            and np.array_equal(self.session_ids, other.session_ids)
        )


def class_gains(n_classes: int, n_channels: int, off_side_gain: float) -> np.ndarray:
    """[n_classes x n_channels]: 1 on the class's channel group, off_side_gain elsewhere."""
    gains = np.full((n_classes, n_channels), off_side_gain)
    for c, group in enumerate(np.array_split(np.arange(n_channels), n_classes)):
        gains[c, group] = 1.0
    return gains


def generate_synthetic(spec: SynthSpec) -> EpochBatch:
    """Deterministic synthetic batch; an identical SynthSpec (seed included) gives identical samples."""
    offsets = make_rng(spec.seed, "subject-offsets").normal(
        0.0, spec.subject_offset_sigma, size=(spec.n_subjects, spec.n_channels)
    )
    trial_rng = make_rng(spec.seed, "trials")
    gains = class_gains(spec.n_classes, spec.n_channels, spec.off_side_gain)
    freqs = np.asarray(spec.class_freq_hz)
    time = np.arange(spec.n_samples) / spec.fs_hz
    n = spec.trials_per_subject_per_session

    data, classes, subjects, sessions = [], [], [], []
    for subject in range(spec.n_subjects):
        for session in range(spec.n_sessions):
            labels = np.arange(n) % spec.n_classes
            phases = trial_rng.uniform(0.0, 2.0 * np.pi, size=n)
            noise = trial_rng.normal(0.0, spec.noise_sigma, size=(n, spec.n_channels, spec.n_samples))
            carrier = np.sin(2.0 * np.pi * freqs[labels][:, None] * time[None, :] + phases[:, None])
            signal = spec.class_amp * gains[labels][:, :, None] * carrier[:, None, :]
            data.append(signal + offsets[subject][None, :, None] + noise)
            classes.append(labels)
            subjects.append(np.full(n, subject))
            sessions.append(np.full(n, session))

    batch = EpochBatch(
        data=np.concatenate(data).astype(np.float32).astype(np.float64),
        class_labels=np.concatenate(classes),
        subject_ids=np.concatenate(subjects),
        session_ids=np.concatenate(sessions),
        fs_hz=float(np.float32(spec.fs_hz)),
    )
    logger.debug(f"Generated {batch.n_trials} synthetic trials for {spec.n_subjects} subjects")
    return batch


def downsample(batch: EpochBatch, factor: int) -> EpochBatch:
    """Mean of each run of `factor` consecutive samples; fs divided by factor."""
    if factor < 1:
        raise DataError(f"downsample factor must be >= 1, got {factor}")
    if batch.n_samples % factor:
        raise DataError(f"downsample factor {factor} does not divide {batch.n_samples} samples")
    steps = batch.n_samples // factor
    data = batch.data.reshape(batch.n_trials, batch.n_channels, steps, factor).mean(axis=3)
    return EpochBatch(
        data=data,
        class_labels=batch.class_labels,
        subject_ids=batch.subject_ids,
        session_ids=batch.session_ids,
        fs_hz=batch.fs_hz / factor,
    )
