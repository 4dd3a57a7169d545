"""Writer (and a small reader) for the PSTB tensor bundle format.

The engine defines the format; this is an independent implementation of
its published layout so exported files are readable by the engine's own
loader byte for byte:

    "PSTB"  u32 version=1  u32 tensor_count
    per tensor:
        u32 name_len, name (utf-8),
        u32 dtype_code (0 = little-endian float32), u32 rank,
        u64 extent per axis, then the raw C-order payload

All integers little-endian. Payloads are written exactly as given, so an
f32 source survives export bitwise.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PSTB"
VERSION = 1
DTYPE_F32 = 0

_F32 = np.dtype("<f4")


def write_tensors(path, tensors: dict[str, np.ndarray]) -> Path:
    """Serialize name -> float32 array, preserving dict order."""
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=_F32, order="C")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<II", DTYPE_F32, arr.ndim))
        for extent in arr.shape:
            chunks.append(struct.pack("<Q", extent))
        chunks.append(arr.tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    return path


def read_tensors(path) -> dict[str, np.ndarray]:
    """Inverse of write_tensors, for inspection and round-trip checks."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a PSTB bundle")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        dtype_code, rank = struct.unpack_from("<II", blob, pos)
        pos += 8
        if dtype_code != DTYPE_F32:
            raise ValueError(f"{path}: unknown dtype code {dtype_code} for {name!r}")
        shape = struct.unpack_from(f"<{rank}Q", blob, pos) if rank else ()
        pos += 8 * rank
        n_bytes = int(np.prod(shape, dtype=np.int64)) * 4 if rank else 4
        arr = np.frombuffer(blob[pos : pos + n_bytes], dtype=_F32).reshape(shape)
        pos += n_bytes
        out[name] = arr
    if pos != len(blob):
        raise ValueError(f"{path}: {len(blob) - pos} trailing bytes")
    return out
