"""PNG image and mask I/O via Pillow.

Images are 8-bit RGB arrays (H, W, 3). Masks travel as single-channel
PNGs: anything above 127 counts as foreground on load, and saves write
{0, 255} so round-trips are exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_image(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB array, got {image.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image, mode="RGB").save(path)


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def save_mask(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2-d mask, got shape {mask.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    out = np.where(mask.astype(bool), 255, 0).astype(np.uint8)
    Image.fromarray(out, mode="L").save(path)
