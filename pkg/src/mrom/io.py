"""Little-endian binary container helpers shared by all artifact formats."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


class FormatError(ValueError):
    pass


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def fnv1a64_file(path) -> str:
    return f"{fnv1a64(Path(path).read_bytes()):016x}"


class Writer:
    def __init__(self, magic: bytes):
        if len(magic) != 8:
            raise ValueError("magic must be 8 bytes")
        self.parts = [magic]

    def u32(self, v: int):
        self.parts.append(struct.pack("<I", v))

    def u64(self, v: int):
        self.parts.append(struct.pack("<Q", v))

    def f64(self, v: float):
        self.parts.append(struct.pack("<d", v))

    def text(self, s: str):
        b = s.encode("utf-8")
        self.u64(len(b))
        self.parts.append(b)

    def array(self, a, order="C"):
        """Raw little-endian f64 payload, no header."""
        a = np.asarray(a, dtype="<f8")
        self.parts.append(a.tobytes(order=order))

    def tensor(self, a):
        """u64 rank, u64 extents, then C-order payload."""
        a = np.asarray(a, dtype="<f8")
        self.u64(a.ndim)
        for n in a.shape:
            self.u64(n)
        self.array(a)

    def tobytes(self) -> bytes:
        return b"".join(self.parts)

    def save(self, path):
        Path(path).write_bytes(self.tobytes())


class Reader:
    def __init__(self, data: bytes, magic: bytes):
        if data[:8] != magic:
            raise FormatError(f"bad magic {data[:8]!r}, expected {magic!r}")
        self.data = data
        self.pos = 8

    @classmethod
    def open(cls, path, magic: bytes) -> "Reader":
        return cls(Path(path).read_bytes(), magic)

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated file")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def text(self) -> str:
        return self._take(self.u64()).decode("utf-8")

    def array(self, shape, order="C") -> np.ndarray:
        count = int(np.prod(shape))
        raw = self._take(8 * count)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape, order=order)

    def tensor(self) -> np.ndarray:
        rank = self.u64()
        shape = tuple(self.u64() for _ in range(rank))
        return self.array(shape)

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes")
