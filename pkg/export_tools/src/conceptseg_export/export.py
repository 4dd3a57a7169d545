"""Turn a loaded checkpoint plus a manifest into a bundle file."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import SourceTensorError
from .manifest import ExportManifest
from .pstb import write_tensors

_F32 = np.dtype("<f4")


def export_bundle(
    checkpoint: dict[str, np.ndarray], manifest: ExportManifest, out_path
) -> Path:
    """Write every mapped tensor, cast to little-endian float32.

    Tensors land in mapping order, so the same manifest always produces
    byte-identical files from the same checkpoint. f32 sources are copied
    bitwise; wider dtypes round once.
    """
    manifest.validate_complete()
    tensors: dict[str, np.ndarray] = {}
    for src_name, dst_name in manifest.mapping.items():
        if src_name not in checkpoint:
            raise SourceTensorError(
                f"checkpoint has no tensor {src_name!r} "
                f"(mapped to bundle tensor {dst_name!r})"
            )
        tensors[dst_name] = np.asarray(checkpoint[src_name], dtype=_F32, order="C")
    return write_tensors(out_path, tensors)
