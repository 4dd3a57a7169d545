"""Offline converters for the conceptseg engine.

This package deliberately does not import the engine. It talks to it
through two file-level contracts only: the PSTB tensor bundle format and
the content-hash naming of precomputed feature tensors. Both are
reimplemented here from the documented interface, so the exporter can run
on a machine that has the pretrained checkpoints but not the engine.
"""

from .errors import ExportError, ManifestError, SourceTensorError
from .export import export_bundle
from .features import export_features, image_content_hash
from .manifest import ExportManifest

__all__ = [
    "ExportError",
    "ExportManifest",
    "ManifestError",
    "SourceTensorError",
    "export_bundle",
    "export_features",
    "image_content_hash",
]
