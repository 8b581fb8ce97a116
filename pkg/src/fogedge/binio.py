"""Little-endian binary reader/writer shared by the on-disk formats.

Every multi-byte field in the window corpus, float model, and packed model
files is little-endian. The Reader raises instead of returning short data,
so truncated or corrupted files fail loudly at parse time.
"""

from __future__ import annotations

import struct

import numpy as np


class BadMagic(ValueError):
    """File does not start with the expected 4-byte tag."""


class BadVersion(ValueError):
    """File has an unsupported format version."""


class UnexpectedEOF(ValueError):
    """File ended before a declared field could be read."""


class Writer:
    def __init__(self) -> None:
        self._buf = bytearray()

    def magic(self, tag: bytes) -> None:
        assert len(tag) == 4
        self._buf += tag

    def u8(self, v: int) -> None:
        self._buf += struct.pack("<B", v)

    def u32(self, v: int) -> None:
        self._buf += struct.pack("<I", v)

    def i32(self, v: int) -> None:
        self._buf += struct.pack("<i", v)

    def f32(self, v: float) -> None:
        self._buf += struct.pack("<f", v)

    def f32s(self, arr) -> None:
        self._buf += np.asarray(arr).astype("<f4").tobytes()

    def i8s(self, arr) -> None:
        self._buf += np.asarray(arr).astype(np.int8).tobytes()

    def i32s(self, arr) -> None:
        self._buf += np.asarray(arr).astype("<i4").tobytes()

    def raw(self, data: bytes) -> None:
        self._buf += data

    def getvalue(self) -> bytes:
        return bytes(self._buf)

    def __len__(self) -> int:
        return len(self._buf)


class Reader:
    def __init__(self, data: bytes, where: str = "stream") -> None:
        self._data = data
        self._pos = 0
        self._where = where

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise UnexpectedEOF(
                f"{self._where}: needed {n} bytes at offset {self._pos}, "
                f"file has {len(self._data)}"
            )
        chunk = self._data[self._pos : self._pos + n]
        self._pos += n
        return chunk

    def expect_magic(self, tag: bytes) -> None:
        if len(self._data) < 4:
            raise BadMagic(f"{self._where}: file shorter than a magic tag")
        got = self._take(4)
        if got != tag:
            raise BadMagic(f"{self._where}: expected magic {tag!r}, got {got!r}")

    def expect_version(self, version: int) -> None:
        got = self.u32()
        if got != version:
            raise BadVersion(f"{self._where}: version {got}, expected {version}")

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def i32(self) -> int:
        return struct.unpack("<i", self._take(4))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self._take(4))[0]

    def f32s(self, n: int) -> np.ndarray:
        return np.frombuffer(self._take(4 * n), dtype="<f4").copy()

    def i8s(self, n: int) -> np.ndarray:
        return np.frombuffer(self._take(n), dtype=np.int8).copy()

    def i32s(self, n: int) -> np.ndarray:
        return np.frombuffer(self._take(4 * n), dtype="<i4").copy()

    def raw(self, n: int) -> bytes:
        return self._take(n)

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos
