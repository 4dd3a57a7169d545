"""Binary tensor container ("PSTB" format).

Carries model weights, precomputed feature maps, and persisted concepts.
Layout, all little-endian:

    header:  magic b"PSTB" | version u32 | tensor count u32
    entry:   name length u32 | name bytes (UTF-8)
             | dtype code u32 (0 = f32) | rank u32
             | one extent u64 per rank dimension
             | raw payload, product(extents) * 4 bytes

Payloads are never value-inspected on read, so NaN bit patterns round-trip
bit-exactly. Entry order is preserved; names must be unique.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import BundleFormatError

MAGIC = b"PSTB"
VERSION = 1
DTYPE_F32 = 0

_LE_F32 = np.dtype("<f4")


class TensorBundle:
    """Ordered name -> float32 ndarray mapping with bit-exact file round-trip."""

    def __init__(self):
        self._tensors: dict[str, np.ndarray] = {}

    def add(self, name: str, array: np.ndarray) -> None:
        if name in self._tensors:
            raise BundleFormatError(f"duplicate tensor name {name!r}")
        # asarray, not ascontiguousarray: the latter promotes rank-0 to (1,)
        arr = np.asarray(array, dtype=_LE_F32, order="C")
        self._tensors[name] = arr

    def replace(self, name: str, array: np.ndarray) -> None:
        """Add or overwrite; used when refitting persisted values."""
        self._tensors.pop(name, None)
        self.add(name, array)

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self._tensors:
            raise KeyError(f"bundle has no tensor named {name!r}")
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> Iterator[str]:
        return iter(self._tensors)

    def items(self):
        return self._tensors.items()

    def write_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<II", VERSION, len(self._tensors)))
        for name, arr in self._tensors.items():
            raw = name.encode("utf-8")
            out.write(struct.pack("<I", len(raw)))
            out.write(raw)
            out.write(struct.pack("<II", DTYPE_F32, arr.ndim))
            for extent in arr.shape:
                out.write(struct.pack("<Q", extent))
            out.write(arr.tobytes())
        return out.getvalue()

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.write_bytes())

    @classmethod
    def read_bytes(cls, blob: bytes) -> "TensorBundle":
        bundle = cls()
        n = len(blob)
        if n < 12:
            raise BundleFormatError(f"truncated header: {n} bytes, need 12")
        if blob[:4] != MAGIC:
            raise BundleFormatError(f"bad magic {blob[:4]!r} at offset 0")
        version, count = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise BundleFormatError(f"unsupported format version {version}")
        pos = 12
        for _ in range(count):
            pos, name, arr = _read_entry(blob, pos)
            if name in bundle._tensors:
                raise BundleFormatError(f"duplicate tensor name {name!r}")
            bundle._tensors[name] = arr
        if pos != n:
            raise BundleFormatError(f"{n - pos} trailing bytes at offset {pos}")
        return bundle

    @classmethod
    def read(cls, path: str | Path) -> "TensorBundle":
        return cls.read_bytes(Path(path).read_bytes())


def _read_entry(blob: bytes, pos: int) -> tuple[int, str, np.ndarray]:
    def need(count: int, what: str):
        if pos + count > len(blob):
            raise BundleFormatError(f"truncated {what} at offset {pos}")

    need(4, "name length")
    (name_len,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    need(name_len, "name")
    name = blob[pos : pos + name_len].decode("utf-8")
    pos += name_len

    def need_named(count: int, what: str):
        if pos + count > len(blob):
            raise BundleFormatError(f"truncated {what} for {name!r} at offset {pos}")

    need_named(8, "dtype/rank")
    dtype_code, rank = struct.unpack_from("<II", blob, pos)
    pos += 8
    if dtype_code != DTYPE_F32:
        raise BundleFormatError(f"unknown dtype code {dtype_code} for {name!r}")
    need_named(8 * rank, "extents")
    extents = struct.unpack_from(f"<{rank}Q" if rank else "<", blob, pos)
    pos += 8 * rank
    if any(e < 1 for e in extents):
        raise BundleFormatError(f"zero extent in {name!r}")
    numel = 1
    for e in extents:
        numel *= e
    need_named(numel * 4, "payload")
    arr = np.frombuffer(blob, dtype=_LE_F32, count=numel, offset=pos).reshape(extents)
    pos += numel * 4
    return pos, name, arr.copy()
