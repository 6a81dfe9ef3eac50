"""
Checkpoint format (all little-endian):

    magic "POSR" | u16 version | u32 JSON length | ModelSpec JSON (UTF-8)
    u32 n_params
    per param: u16 name length | name (UTF-8) | u8 rank | u32[rank] extents | f64[prod(extents)]

The JSON block is the ModelSpec the model was built from, so a checkpoint
rebuilds the same architecture before its parameter values are restored.
"""

import logging
import math
import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np
from pydantic import ValidationError

from posr.binary import BinaryReader, FormatError
from posr.encoder import DualEncoderModel
from posr.models import ModelSpec
from posr.rng import make_rng

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"POSR"
CHECKPOINT_VERSION = 1


def encode_checkpoint(model: DualEncoderModel) -> bytes:
    spec_json = model.spec.model_dump_json().encode("utf-8")
    params = model.parameters()
    parts = [
        struct.pack("<4sHI", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(spec_json)),
        spec_json,
        struct.pack("<I", len(params)),
    ]
    for param in params:
        name = param.name.encode("utf-8")
        shape = param.values.shape
        parts.append(struct.pack("<H", len(name)) + name)
        parts.append(struct.pack(f"<B{len(shape)}I", len(shape), *shape))
        parts.append(np.ascontiguousarray(param.values, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(model: DualEncoderModel, path: Union[str, Path]) -> Path:
    """Write model to path, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(model))
    logger.info(f"💾 Saved checkpoint {path}")
    return path


def decode_checkpoint(buf: bytes, source: str = "<buffer>") -> DualEncoderModel:
    reader = BinaryReader(buf, source=source)
    reader.expect_magic(CHECKPOINT_MAGIC)
    reader.expect_version(CHECKPOINT_VERSION)
    (spec_len,) = reader.unpack("<I")
    try:
        spec = ModelSpec.model_validate_json(reader.take(spec_len))
    except ValidationError as e:
        raise FormatError(f"{source}: invalid model description: {e}")

    (n_params,) = reader.unpack("<I")
    state: Dict[str, np.ndarray] = {}
    for _ in range(n_params):
        (name_len,) = reader.unpack("<H")
        try:
            name = reader.take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{source}: parameter name is not UTF-8")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I") if rank else ()
        count = math.prod(shape)
        if name in state:
            raise FormatError(f"{source}: parameter {name} stored twice")
        state[name] = reader.array("<f8", count).astype(np.float64).reshape(shape)
    reader.expect_end()

    # Initial values are overwritten by the stored state below.
    model = DualEncoderModel(spec, make_rng(0, "checkpoint"))
    expected = model.named_parameters()
    if set(state) != set(expected):
        missing = sorted(set(expected) - set(state))
        extra = sorted(set(state) - set(expected))
        raise FormatError(f"{source}: parameter set mismatch (missing {missing}, unexpected {extra})")
    for name, param in expected.items():
        if state[name].shape != param.shape:
            raise FormatError(f"{source}: {name} stored as {state[name].shape}, model expects {param.shape}")
    model.load_state(state)
    return model


def load_checkpoint(path: Union[str, Path]) -> DualEncoderModel:
    """
    Rebuild a model from a checkpoint; parameter values come back bit-exact.

    Raises:
        BadMagicError, UnsupportedVersionError, TruncatedFileError, FormatError
    """
    path = Path(path)
    model = decode_checkpoint(path.read_bytes(), source=str(path))
    logger.debug(f"Loaded checkpoint {path} ({len(model.parameters())} parameters)")
    return model
