"""Seeded random streams.

Every stream is numpy's Philox counter-based generator. Its 128-bit key holds
the 64-bit seed in the low half and a hash of the purpose tag in the high
half, so the same (seed, tag) reproduces the same numbers on any platform and
distinct tags never share a stream.
"""

import hashlib
from typing import Union

import numpy as np

Tag = Union[str, int]


def make_rng(seed: int, *stream: Tag) -> np.random.Generator:
    """Independent generator for (seed, *stream)."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit value, got {seed}")
    digest = hashlib.sha256("/".join(str(part) for part in stream).encode("utf-8")).digest()
    tag = int.from_bytes(digest[:8], "little")
    return np.random.Generator(np.random.Philox(key=seed | (tag << 64)))
