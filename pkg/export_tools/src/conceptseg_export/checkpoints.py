"""Checkpoint readers: .npz archives and torch .pt/.pth state dicts."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ExportError


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Load a checkpoint as a flat name -> ndarray dict.

    .npz loads directly; .pt/.pth goes through torch (an optional
    dependency) and unwraps the common {"state_dict": ...} nesting.
    """
    path = Path(path)
    if not path.is_file():
        raise ExportError(f"checkpoint not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".npz":
        with np.load(path) as data:
            return {name: np.asarray(data[name]) for name in data.files}
    if suffix in (".pt", ".pth"):
        return _load_torch(path)
    raise ExportError(f"unsupported checkpoint format {suffix!r} ({path})")


def _load_torch(path: Path) -> dict[str, np.ndarray]:
    try:
        import torch
    except ImportError as e:
        raise ExportError(
            f"reading {path} needs torch; install the [torch] extra"
        ) from e
    state = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    if not isinstance(state, dict):
        raise ExportError(f"{path} does not contain a state dict")
    out = {}
    for name, value in state.items():
        if isinstance(value, torch.Tensor):
            out[name] = value.detach().cpu().numpy()
    return out
