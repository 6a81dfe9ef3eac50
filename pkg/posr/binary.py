"""Little-endian binary containers shared by epoch files and checkpoints."""

import struct
from typing import Tuple

import numpy as np


class FormatError(Exception):
    """Base exception for malformed binary files."""
    pass


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class BinaryReader:
    """Cursor over a byte buffer that raises TruncatedFileError instead of short reads."""

    def __init__(self, buf: bytes, source: str = "<buffer>"):
        self.buf = buf
        self.pos = 0
        self.source = source

    @property
    def remaining(self) -> int:
        return len(self.buf) - self.pos

    def take(self, n: int) -> bytes:
        if n < 0:
            raise FormatError(f"{self.source}: negative length {n} at offset {self.pos}")
        self.require(n)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def require(self, n: int) -> None:
        """Raise TruncatedFileError unless n more bytes are available."""
        if n > self.remaining:
            raise TruncatedFileError(
                f"{self.source}: needed {n} bytes at offset {self.pos}, only {self.remaining} left"
            )

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: np.dtype, count: int) -> np.ndarray:
        dtype = np.dtype(dtype)
        if count < 0:
            raise FormatError(f"{self.source}: negative element count {count} at offset {self.pos}")
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype, count=count)

    def expect_magic(self, magic: bytes) -> None:
        found = self.take(len(magic))
        if found != magic:
            raise BadMagicError(f"{self.source}: expected magic {magic!r}, found {found!r}")

    def expect_version(self, supported: int) -> int:
        (version,) = self.unpack("<H")
        if version != supported:
            raise UnsupportedVersionError(f"{self.source}: format version {version} (supported: {supported})")
        return version

    def expect_end(self) -> None:
        if self.remaining:
            raise FormatError(f"{self.source}: {self.remaining} unexpected trailing bytes")
