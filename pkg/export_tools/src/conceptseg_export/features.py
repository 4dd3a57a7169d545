"""Package precomputed feature grids so the engine can skip its encoder.

The engine looks features up under "img:<content-hash>", where the hash
is sha256 over a fixed framing of the raw pixels:

    sha256(b"RGB8" + u32le(width) + u32le(height) + RGB bytes, row-major)

That framing is reproduced here exactly; a mismatch would make every
lookup miss. Feature arrays come from an .npz keyed by image file stem
and must be rank-3 (h, w, channels) grids.
"""

from __future__ import annotations

import hashlib
import struct
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ExportError
from .pstb import write_tensors

TENSOR_PREFIX = "img:"


def image_content_hash(image: np.ndarray) -> str:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ExportError(f"expected an 8-bit RGB array, got {image.dtype} {image.shape}")
    h, w = image.shape[:2]
    digest = hashlib.sha256()
    digest.update(b"RGB8")
    digest.update(struct.pack("<II", w, h))
    digest.update(np.ascontiguousarray(image).tobytes())
    return digest.hexdigest()


def _hash_file(path: Path) -> str:
    with Image.open(path) as im:
        return image_content_hash(np.asarray(im.convert("RGB"), dtype=np.uint8))


def export_features(image_paths, features: dict[str, np.ndarray], out_path, jobs: int = 1) -> Path:
    """Write one "img:<hash>" tensor per image, in sorted path order.

    `features` maps image file stems to (h, w, c) grids. Hashing is the
    slow part for big images, so it fans out over `jobs` threads; the
    output file does not depend on the thread count.
    """
    paths = sorted(Path(p) for p in image_paths)
    if not paths:
        raise ExportError("no images to export features for")
    for path in paths:
        if path.stem not in features:
            raise ExportError(f"no feature array for image {path.name!r}")
        grid = np.asarray(features[path.stem])
        if grid.ndim != 3:
            raise ExportError(
                f"feature array for {path.name!r} must be rank 3, got shape {grid.shape}"
            )
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            hashes = list(pool.map(_hash_file, paths))
    else:
        hashes = [_hash_file(p) for p in paths]
    tensors = {
        TENSOR_PREFIX + digest: np.asarray(features[path.stem])
        for path, digest in zip(paths, hashes)
    }
    if len(tensors) != len(paths):
        raise ExportError("two images share identical pixel content")
    return write_tensors(out_path, tensors)
