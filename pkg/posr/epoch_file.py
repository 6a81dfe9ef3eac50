"""
Epoch file format (all little-endian):

    magic "EEGB" | u16 version | u32 n_trials | u16 n_channels | u32 n_samples | f32 fs_hz
    per trial: u16 class label | u16 subject id | u16 session id | f32[n_channels][n_samples]

Samples are stored channel-major as 32-bit floats and widened to 64-bit on read.
"""

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from posr.binary import BinaryReader, FormatError
from posr.epochs import EpochBatch

logger = logging.getLogger(__name__)

MAGIC = b"EEGB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIHIf")
_U16_MAX = 2**16 - 1


def _trial_dtype(n_channels: int, n_samples: int) -> np.dtype:
    return np.dtype([
        ("class_label", "<u2"),
        ("subject_id", "<u2"),
        ("session_id", "<u2"),
        ("samples", "<f4", (n_channels, n_samples)),
    ])


def write_epochs(batch: EpochBatch, path: Union[str, Path]) -> Path:
    """Write batch to path, creating parent directories."""
    path = Path(path)
    for name in ("class_labels", "subject_ids", "session_ids"):
        values = getattr(batch, name)
        if values.size and values.max() > _U16_MAX:
            raise FormatError(f"{name} exceed the 16-bit range of the epoch format")
    if batch.n_channels > _U16_MAX:
        raise FormatError(f"{batch.n_channels} channels exceed the 16-bit range of the epoch format")

    records = np.zeros(batch.n_trials, dtype=_trial_dtype(batch.n_channels, batch.n_samples))
    records["class_label"] = batch.class_labels
    records["subject_id"] = batch.subject_ids
    records["session_id"] = batch.session_ids
    records["samples"] = batch.data.astype(np.float32)

    header = _HEADER.pack(MAGIC, FORMAT_VERSION, batch.n_trials, batch.n_channels, batch.n_samples, batch.fs_hz)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + records.tobytes())
    logger.info(f"💾 Wrote {batch.n_trials} trials to {path}")
    return path


def read_epochs(path: Union[str, Path]) -> EpochBatch:
    """
    Read an epoch file.

    Raises:
        BadMagicError, UnsupportedVersionError, TruncatedFileError, FormatError
    """
    path = Path(path)
    reader = BinaryReader(path.read_bytes(), source=str(path))
    reader.expect_magic(MAGIC)
    reader.expect_version(FORMAT_VERSION)
    n_trials, n_channels, n_samples, fs_hz = reader.unpack("<IHIf")
    if fs_hz <= 0:
        raise FormatError(f"{path}: sampling rate must be positive, got {fs_hz}")

    reader.require(n_trials * (6 + 4 * n_channels * n_samples))
    try:
        trial = _trial_dtype(n_channels, n_samples)
    except (ValueError, OverflowError):
        raise FormatError(f"{path}: trial extents {n_channels}x{n_samples} are not representable")
    records = reader.array(trial, n_trials)
    reader.expect_end()
    return EpochBatch(
        data=records["samples"].astype(np.float64),
        class_labels=records["class_label"],
        subject_ids=records["subject_id"],
        session_ids=records["session_id"],
        fs_hz=float(fs_hz),
    )
