"""Export manifests: which checkpoint tensors become which bundle tensors.

A manifest is a JSON object:

    {
      "source": "sam_vit_h_4b8939.pth",
      "mapping": {"mask_decoder.iou_token.weight": "dec.mask_tokens", ...},
      "cast": "f32",
      "component": "decoder",
      "decoder_depth": 2
    }

`source` is a human-readable checkpoint identifier recorded for
provenance; the checkpoint actually read is whatever the caller passes.
`cast` admits only "f32" (the bundle format stores nothing else).
`component` is null for free-form exports; "decoder" additionally demands
that the mapping covers every tensor of a depth-`decoder_depth` decoder,
so a half-converted checkpoint fails at manifest time, not at load time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ManifestError
from .naming import decoder_tensor_names

_KEYS = {"source", "mapping", "cast", "component", "decoder_depth"}


@dataclass(frozen=True)
class ExportManifest:
    source: str
    mapping: dict[str, str]
    cast: str = "f32"
    component: str | None = None
    decoder_depth: int = 2
    # bundle name -> source name, for error messages
    reverse: dict[str, str] = field(init=False, repr=False)

    def __post_init__(self):
        if self.cast != "f32":
            raise ManifestError(f"unsupported cast policy {self.cast!r}, only 'f32'")
        if self.component not in (None, "decoder"):
            raise ManifestError(f"unknown component {self.component!r}")
        if not self.mapping:
            raise ManifestError("manifest maps no tensors")
        reverse: dict[str, str] = {}
        for src, dst in self.mapping.items():
            if dst in reverse:
                raise ManifestError(
                    f"both {reverse[dst]!r} and {src!r} map to bundle tensor {dst!r}"
                )
            reverse[dst] = src
        object.__setattr__(self, "reverse", reverse)
        self.validate_complete()

    def required_names(self) -> list[str]:
        if self.component == "decoder":
            return decoder_tensor_names(self.decoder_depth)
        return []

    def validate_complete(self) -> None:
        for name in self.required_names():
            if name not in self.reverse:
                raise ManifestError(
                    f"manifest does not map required tensor {name!r}"
                )

    @classmethod
    def from_dict(cls, data: dict) -> "ExportManifest":
        unknown = set(data) - _KEYS
        if unknown:
            raise ManifestError(f"unknown manifest key {sorted(unknown)[0]!r}")
        for key in ("source", "mapping"):
            if key not in data:
                raise ManifestError(f"manifest is missing {key!r}")
        return cls(
            source=data["source"],
            mapping=dict(data["mapping"]),
            cast=data.get("cast", "f32"),
            component=data.get("component"),
            decoder_depth=int(data.get("decoder_depth", 2)),
        )

    @classmethod
    def from_json(cls, path) -> "ExportManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ManifestError(f"manifest {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ManifestError(f"manifest {path} must be a JSON object")
        return cls.from_dict(data)
