"""Image encoder: turns an RGB raster into an h*w*c feature grid.

Two modes:

* ``precomputed`` - the weights bundle carries a ready feature grid per
  image, stored under ``img:<content-hash>``. Lets the full pipeline run
  against features exported offline from a large pretrained encoder.
* ``tiny-vit`` - a small from-scratch vision transformer (patch embedding,
  pre-norm blocks of self-attention + MLP, final layer norm) whose weights
  live in the same bundle format. Small enough to run with synthetic
  weights in tests.

Tensor naming scheme for tiny-vit weights (shapes for patch size p, grid
g = resolution // p, width c, MLP hidden 4c):

    enc.patch_embed.weight   (p*p*3, c)      enc.patch_embed.bias (c,)
    enc.pos_embed            (g*g, c)
    enc.block{i}.ln1.weight/.bias            (c,)
    enc.block{i}.attn.{q,k,v,out}.weight     (c, c)   + .bias (c,)
    enc.block{i}.ln2.weight/.bias            (c,)
    enc.block{i}.mlp.fc1.weight (c, 4c) /.bias (4c,)
    enc.block{i}.mlp.fc2.weight (4c, c) /.bias (c,)
    enc.ln_f.weight/.bias                    (c,)
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .bundle import TensorBundle
from .errors import DegenerateMaskError
from .kernels import bilinear_resize
from .layers import AttentionParams, attend, layer_norm, linear, relu, take

MODES = ("precomputed", "tiny-vit")


@dataclass(frozen=True)
class EncoderConfig:
    mode: str = "tiny-vit"
    patch_size: int = 4
    depth: int = 2
    heads: int = 4
    embed_dim: int = 32
    resolution: int = 64
    stride: int = 0  # pixels per feature cell; 0 means patch_size

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown encoder mode {self.mode!r}")
        if self.resolution % self.patch_size != 0:
            raise ValueError("resolution must be divisible by patch_size")
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")
        if self.stride == 0:
            object.__setattr__(self, "stride", self.patch_size)

    @property
    def grid_size(self) -> int:
        return self.resolution // self.patch_size


@dataclass(frozen=True)
class FeatureMap:
    """h*w*c feature grid plus the geometry linking it to its source image."""

    grid: np.ndarray
    image_size: tuple[int, int]  # (height, width) in pixels
    stride: int

    def __post_init__(self):
        h, w = self.grid.shape[:2]
        if (h * self.stride, w * self.stride) != self.image_size:
            raise ValueError(
                f"feature grid {h}x{w} at stride {self.stride} does not cover "
                f"image {self.image_size}"
            )

    @property
    def channels(self) -> int:
        return self.grid.shape[2]


def image_content_hash(image: np.ndarray) -> str:
    """Content hash keying precomputed features: sha256 over a fixed framing
    of the raw 8-bit RGB pixels. Exporters must reproduce this exactly."""
    image = _checked_rgb(image)
    h, w = image.shape[:2]
    digest = hashlib.sha256()
    digest.update(b"RGB8")
    digest.update(struct.pack("<II", w, h))
    digest.update(np.ascontiguousarray(image).tobytes())
    return digest.hexdigest()


def feature_tensor_name(image: np.ndarray) -> str:
    return f"img:{image_content_hash(image)}"


def _checked_rgb(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"expected 8-bit RGB raster, got {image.dtype} {image.shape}")
    return image


def encode_image(
    image: np.ndarray, cfg: EncoderConfig, weights: TensorBundle
) -> FeatureMap:
    """Encode an 8-bit RGB image into a FeatureMap. Deterministic."""
    image = _checked_rgb(image)
    img_h, img_w = image.shape[:2]
    if cfg.mode == "precomputed":
        grid = weights[feature_tensor_name(image)]
        if grid.ndim != 3:
            raise ValueError(f"precomputed feature must be rank 3, got {grid.shape}")
        h, w = grid.shape[:2]
        if img_h % h != 0 or img_w % w != 0 or img_h // h != img_w // w:
            raise ValueError(
                f"feature grid {h}x{w} does not evenly tile image {img_h}x{img_w}"
            )
        return FeatureMap(grid=grid, image_size=(img_h, img_w), stride=img_h // h)

    if (img_h, img_w) != (cfg.resolution, cfg.resolution):
        raise ValueError(
            f"image is {img_h}x{img_w}, encoder expects "
            f"{cfg.resolution}x{cfg.resolution}"
        )
    grid = _tiny_vit_forward(image, cfg, weights)
    return FeatureMap(grid=grid, image_size=(img_h, img_w), stride=cfg.stride)


def _tiny_vit_forward(
    image: np.ndarray, cfg: EncoderConfig, weights: TensorBundle
) -> np.ndarray:
    p, c, g = cfg.patch_size, cfg.embed_dim, cfg.grid_size
    x = image.astype(np.float32) / 255.0
    patches = (
        x.reshape(g, p, g, p, 3).transpose(0, 2, 1, 3, 4).reshape(g * g, p * p * 3)
    )

    w_pe = take(weights, "enc.patch_embed.weight", (p * p * 3, c))
    b_pe = take(weights, "enc.patch_embed.bias", (c,))
    pos = take(weights, "enc.pos_embed", (g * g, c))
    tok = linear(patches, w_pe, b_pe) + pos

    for i in range(cfg.depth):
        pre = f"enc.block{i}"
        ln1_w = take(weights, f"{pre}.ln1.weight", (c,))
        ln1_b = take(weights, f"{pre}.ln1.bias", (c,))
        attn = AttentionParams(weights, f"{pre}.attn", c)
        h = layer_norm(tok, ln1_w, ln1_b)
        tok = tok + attend(attn, h, h, cfg.heads)

        ln2_w = take(weights, f"{pre}.ln2.weight", (c,))
        ln2_b = take(weights, f"{pre}.ln2.bias", (c,))
        fc1_w = take(weights, f"{pre}.mlp.fc1.weight", (c, 4 * c))
        fc1_b = take(weights, f"{pre}.mlp.fc1.bias", (4 * c,))
        fc2_w = take(weights, f"{pre}.mlp.fc2.weight", (4 * c, c))
        fc2_b = take(weights, f"{pre}.mlp.fc2.bias", (c,))
        h = layer_norm(tok, ln2_w, ln2_b)
        tok = tok + linear(relu(linear(h, fc1_w, fc1_b)), fc2_w, fc2_b)

    lnf_w = take(weights, "enc.ln_f.weight", (c,))
    lnf_b = take(weights, "enc.ln_f.bias", (c,))
    tok = layer_norm(tok, lnf_w, lnf_b)
    return tok.reshape(g, g, c)


def encoder_tensor_names(cfg: EncoderConfig) -> list[str]:
    """All tensor names a tiny-vit weights bundle must provide."""
    names = ["enc.patch_embed.weight", "enc.patch_embed.bias", "enc.pos_embed"]
    for i in range(cfg.depth):
        pre = f"enc.block{i}"
        names += [f"{pre}.ln1.weight", f"{pre}.ln1.bias"]
        names += AttentionParams.names(f"{pre}.attn")
        names += [f"{pre}.ln2.weight", f"{pre}.ln2.bias"]
        names += [
            f"{pre}.mlp.fc1.weight",
            f"{pre}.mlp.fc1.bias",
            f"{pre}.mlp.fc2.weight",
            f"{pre}.mlp.fc2.bias",
        ]
    names += ["enc.ln_f.weight", "enc.ln_f.bias"]
    return names


def downsample_mask(mask: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    """Bring a binary pixel mask to feature resolution: bilinear resize, then
    threshold at 0.5. Returns an h*w*1 float32 map of {0, 1}.

    Raises DegenerateMaskError if a non-empty input produces an empty result
    (object smaller than one feature cell).
    """
    mask = np.asarray(mask)
    values = np.unique(mask)
    if not np.all(np.isin(values, (0, 1))):
        raise ValueError("mask values must be 0 or 1")
    h, w = target_hw
    soft = bilinear_resize(mask.astype(np.float32), h, w)
    hard = (soft > 0.5).astype(np.float32)
    if mask.any() and not hard.any():
        raise DegenerateMaskError(
            f"mask with {int(mask.sum())} foreground pixels is empty at "
            f"feature resolution {h}x{w}"
        )
    return hard[:, :, None]
