"""Prompt encoding and the lightweight two-way mask decoder.

The decoder runs `depth` two-way blocks over (tokens, image cells). Each
block applies, in order: token self-attention, token-to-image
cross-attention, a token MLP, and image-to-token cross-attention, each with
a residual add followed by layer norm. Two guidance hooks personalize it:

* a confidence-map attention bias mixed into every token-to-image
  cross-attention distribution (per head, same bias for all heads), and
* the target's global embedding added element-wise to all input tokens.

With the bias factor at 0 and a zero target embedding, both hooks vanish
and the decoder reproduces the unguided baseline bit for bit.

Three mask tokens yield three output scales (whole / part / subpart).
Each mask token drives a small hypernetwork MLP whose output is dotted
with a 4x-upscaled image embedding to produce a logit map; logit maps are
then resized to image resolution.

Tensor naming scheme for decoder weights (width c, heads H, depth D):

    dec.mask_tokens                      (3, c)
    dec.pe.freqs                         (2, c/2)   point pos-encoding bank
    dec.kind_embed                       (4, c)     rows: positive point,
                                                    negative point, box
                                                    top-left, box bottom-right
    dec.mask_prompt.weight (1, c) /.bias (c,)       mask-prompt projection
    dec.block{i}.self_attn.{q,k,v,out}.{weight,bias}
    dec.block{i}.norm1.{weight,bias}
    dec.block{i}.t2i_attn.{q,k,v,out}.{weight,bias}
    dec.block{i}.norm2.{weight,bias}
    dec.block{i}.mlp.fc1.weight (c, 4c) /.bias  and .fc2 back to c
    dec.block{i}.norm3.{weight,bias}
    dec.block{i}.i2t_attn.{q,k,v,out}.{weight,bias}
    dec.block{i}.norm4.{weight,bias}
    dec.upscale.fc1.weight (c, c/4) /.bias          2x bilinear + linear,
    dec.upscale.fc2.weight (c/4, c/8) /.bias        applied twice with GELU
    dec.hyper{j}.fc1.weight (c, c) /.bias           per-mask-token MLP,
    dec.hyper{j}.fc2.weight (c, c) /.bias           ReLU between layers
    dec.hyper{j}.fc3.weight (c, c/8) /.bias
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import TensorBundle
from .concept import ConfidenceMap, LocationPrior
from .encoder import FeatureMap
from .kernels import bilinear_resize, softmax
from .layers import (
    AttentionParams,
    attend,
    gelu,
    layer_norm,
    linear,
    relu,
    take,
)

NUM_MASK_TOKENS = 3
KIND_POSITIVE, KIND_NEGATIVE, KIND_BOX_TL, KIND_BOX_BR = range(4)


@dataclass(frozen=True)
class DecoderConfig:
    depth: int = 2
    heads: int = 4
    embed_dim: int = 32
    # literal formula biases post-softmax rows; the pre-softmax alternative
    # adds the bias to attention logits instead (off by default)
    bias_pre_softmax: bool = False

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")
        if self.embed_dim % 8 != 0:
            raise ValueError("embed_dim must be divisible by 8 (upscaler widths)")
        if self.embed_dim % 2 != 0:
            raise ValueError("embed_dim must be even (sin/cos position encoding)")


@dataclass(frozen=True)
class PromptTokens:
    """k*c token matrix with per-token kind tags."""

    tokens: np.ndarray
    kinds: tuple[int, ...]

    @property
    def k(self) -> int:
        return self.tokens.shape[0]


@dataclass(frozen=True)
class AttentionBias:
    """Balancing factor plus the softmax-normalized flat confidence map."""

    alpha: float
    s_flat: np.ndarray  # (h*w,), sums to 1

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("balancing factor must be >= 0")

    @classmethod
    def from_confidence(
        cls, conf: ConfidenceMap, alpha: float, target_hw: tuple[int, int] | None = None
    ) -> "AttentionBias":
        """Build the bias, resizing the map to the decoder's embedding
        resolution first when they differ."""
        scores = conf.scores
        if target_hw is not None and scores.shape != tuple(target_hw):
            scores = bilinear_resize(scores, *target_hw)
        return cls(alpha=float(alpha), s_flat=softmax(scores.reshape(-1), axis=0))


class DecoderWeights:
    """Shape-validated view of all decoder tensors in a bundle."""

    def __init__(self, cfg: DecoderConfig, bundle: TensorBundle):
        c = cfg.embed_dim
        self.cfg = cfg
        self.mask_tokens = take(bundle, "dec.mask_tokens", (NUM_MASK_TOKENS, c))
        self.pe_freqs = take(bundle, "dec.pe.freqs", (2, c // 2))
        self.kind_embed = take(bundle, "dec.kind_embed", (4, c))
        self.mask_prompt_w = take(bundle, "dec.mask_prompt.weight", (1, c))
        self.mask_prompt_b = take(bundle, "dec.mask_prompt.bias", (c,))
        self.blocks = []
        for i in range(cfg.depth):
            pre = f"dec.block{i}"
            self.blocks.append(
                {
                    "self_attn": AttentionParams(bundle, f"{pre}.self_attn", c),
                    "norm1": _norm(bundle, f"{pre}.norm1", c),
                    "t2i_attn": AttentionParams(bundle, f"{pre}.t2i_attn", c),
                    "norm2": _norm(bundle, f"{pre}.norm2", c),
                    "mlp": (
                        take(bundle, f"{pre}.mlp.fc1.weight", (c, 4 * c)),
                        take(bundle, f"{pre}.mlp.fc1.bias", (4 * c,)),
                        take(bundle, f"{pre}.mlp.fc2.weight", (4 * c, c)),
                        take(bundle, f"{pre}.mlp.fc2.bias", (c,)),
                    ),
                    "norm3": _norm(bundle, f"{pre}.norm3", c),
                    "i2t_attn": AttentionParams(bundle, f"{pre}.i2t_attn", c),
                    "norm4": _norm(bundle, f"{pre}.norm4", c),
                }
            )
        self.up_fc1 = (
            take(bundle, "dec.upscale.fc1.weight", (c, c // 4)),
            take(bundle, "dec.upscale.fc1.bias", (c // 4,)),
        )
        self.up_fc2 = (
            take(bundle, "dec.upscale.fc2.weight", (c // 4, c // 8)),
            take(bundle, "dec.upscale.fc2.bias", (c // 8,)),
        )
        self.hyper = []
        for j in range(NUM_MASK_TOKENS):
            pre = f"dec.hyper{j}"
            self.hyper.append(
                (
                    take(bundle, f"{pre}.fc1.weight", (c, c)),
                    take(bundle, f"{pre}.fc1.bias", (c,)),
                    take(bundle, f"{pre}.fc2.weight", (c, c)),
                    take(bundle, f"{pre}.fc2.bias", (c,)),
                    take(bundle, f"{pre}.fc3.weight", (c, c // 8)),
                    take(bundle, f"{pre}.fc3.bias", (c // 8,)),
                )
            )


def _norm(bundle: TensorBundle, prefix: str, c: int):
    return (
        take(bundle, f"{prefix}.weight", (c,)),
        take(bundle, f"{prefix}.bias", (c,)),
    )


def decoder_tensor_names(cfg: DecoderConfig) -> list[str]:
    """All tensor names a decoder weights bundle must provide."""
    names = [
        "dec.mask_tokens",
        "dec.pe.freqs",
        "dec.kind_embed",
        "dec.mask_prompt.weight",
        "dec.mask_prompt.bias",
    ]
    for i in range(cfg.depth):
        pre = f"dec.block{i}"
        names += AttentionParams.names(f"{pre}.self_attn")
        names += [f"{pre}.norm1.weight", f"{pre}.norm1.bias"]
        names += AttentionParams.names(f"{pre}.t2i_attn")
        names += [f"{pre}.norm2.weight", f"{pre}.norm2.bias"]
        names += [
            f"{pre}.mlp.fc1.weight",
            f"{pre}.mlp.fc1.bias",
            f"{pre}.mlp.fc2.weight",
            f"{pre}.mlp.fc2.bias",
        ]
        names += [f"{pre}.norm3.weight", f"{pre}.norm3.bias"]
        names += AttentionParams.names(f"{pre}.i2t_attn")
        names += [f"{pre}.norm4.weight", f"{pre}.norm4.bias"]
    names += [
        "dec.upscale.fc1.weight",
        "dec.upscale.fc1.bias",
        "dec.upscale.fc2.weight",
        "dec.upscale.fc2.bias",
    ]
    for j in range(NUM_MASK_TOKENS):
        pre = f"dec.hyper{j}"
        names += [
            f"{pre}.fc1.weight",
            f"{pre}.fc1.bias",
            f"{pre}.fc2.weight",
            f"{pre}.fc2.bias",
            f"{pre}.fc3.weight",
            f"{pre}.fc3.bias",
        ]
    return names


def point_position_encoding(
    xy: tuple[float, float], image_size: tuple[int, int], freqs: np.ndarray
) -> np.ndarray:
    """Sinusoidal encoding of a pixel coordinate: normalize to [0,1], map
    to [-1,1], project through the frequency bank, take sin and cos."""
    img_h, img_w = image_size
    x, y = xy
    if not (0 <= x <= img_w and 0 <= y <= img_h):
        raise ValueError(f"point ({x}, {y}) outside image {img_w}x{img_h}")
    p = np.array([x / img_w, y / img_h], dtype=np.float32) * 2.0 - 1.0
    z = (2.0 * np.pi) * (p @ freqs)
    return np.concatenate([np.sin(z), np.cos(z)]).astype(np.float32)


def encode_prompts(
    prior: LocationPrior,
    image_size: tuple[int, int],
    weights: DecoderWeights,
    box: tuple[float, float, float, float] | None = None,
) -> PromptTokens:
    """Turn the location prior (and optional box) into prompt tokens.

    Each token is the sinusoidal position encoding of its coordinate plus
    its kind embedding. k = 2 without a box, 4 with one (top-left and
    bottom-right corner tokens).
    """
    freqs = weights.pe_freqs
    kind = weights.kind_embed
    points = [
        (prior.positive, KIND_POSITIVE),
        (prior.negative, KIND_NEGATIVE),
    ]
    if box is not None:
        x0, y0, x1, y1 = box
        points.append(((x0, y0), KIND_BOX_TL))
        points.append(((x1, y1), KIND_BOX_BR))
    rows = [
        point_position_encoding(xy, image_size, freqs) + kind[tag]
        for xy, tag in points
    ]
    return PromptTokens(
        tokens=np.stack(rows).astype(np.float32),
        kinds=tuple(tag for _, tag in points),
    )


def guided_cross_attention(rows: np.ndarray, bias: AttentionBias) -> np.ndarray:
    """Re-modulate post-softmax attention rows with the confidence bias:
    new rows = softmax(rows + alpha * s_flat) over the spatial axis.

    Accepts any leading shape; the last axis must equal len(s_flat).
    Output rows sum to 1 and keep the ordering of rows + alpha * s_flat.
    """
    rows = np.asarray(rows, dtype=np.float32)
    if rows.shape[-1] != bias.s_flat.shape[0]:
        raise ValueError(
            f"spatial length {rows.shape[-1]} does not match bias "
            f"{bias.s_flat.shape[0]}"
        )
    return softmax(rows + np.float32(bias.alpha) * bias.s_flat, axis=-1)


def semantic_prompt_tokens(
    target: np.ndarray, mask_tokens: np.ndarray, prompts: PromptTokens
) -> np.ndarray:
    """Element-wise add the global target embedding to every input token:
    concat(mask tokens, prompt tokens) + broadcast target. (m+k, c)."""
    target = np.asarray(target, dtype=np.float32).reshape(-1)
    stacked = np.concatenate([mask_tokens, prompts.tokens], axis=0)
    if target.shape[0] != stacked.shape[1]:
        raise ValueError(
            f"target embedding width {target.shape[0]} does not match "
            f"token width {stacked.shape[1]}"
        )
    return (stacked + target[None, :]).astype(np.float32)


def decode_masks(
    features: FeatureMap,
    tokens: np.ndarray,
    weights: DecoderWeights,
    bias: AttentionBias | None = None,
    mask_prompt: np.ndarray | None = None,
) -> np.ndarray:
    """Run the two-way decoder; returns logits of shape (3, img_h, img_w).

    `tokens` is the (m+k, c) guided token matrix (mask tokens first).
    `bias`, when present with alpha > 0, modulates every token-to-image
    attention distribution; alpha == 0 (or no bias) leaves the decoder on
    its unguided baseline path. `mask_prompt`, when present, is an h*w*1
    logit map at feature resolution, projected to c channels and added to
    the image embedding before the blocks.
    """
    cfg = weights.cfg
    h, w, c = features.grid.shape
    if tokens.ndim != 2 or tokens.shape[1] != c:
        raise ValueError(f"tokens must be (m+k, {c}), got {tokens.shape}")
    image = features.grid.reshape(h * w, c).astype(np.float32)

    if mask_prompt is not None:
        mask_prompt = np.asarray(mask_prompt, dtype=np.float32)
        if mask_prompt.shape not in ((h, w, 1), (h, w)):
            raise ValueError(
                f"mask prompt must be {h}x{w}x1, got {mask_prompt.shape}"
            )
        image = image + linear(
            mask_prompt.reshape(h * w, 1), weights.mask_prompt_w, weights.mask_prompt_b
        )

    row_transform = None
    if bias is not None and bias.alpha > 0:
        if cfg.bias_pre_softmax:
            shift = np.float32(bias.alpha) * bias.s_flat

            def row_transform(rows, _shift=shift):
                # alternative form: bias the attention logits, single softmax
                return softmax(np.log(np.maximum(rows, 1e-30)) + _shift, axis=-1)

        else:

            def row_transform(rows, _bias=bias):
                return guided_cross_attention(rows, _bias)

    x = tokens.astype(np.float32)
    for blk in weights.blocks:
        x = layer_norm(x + attend(blk["self_attn"], x, x, cfg.heads), *blk["norm1"])
        x = layer_norm(
            x + attend(blk["t2i_attn"], x, image, cfg.heads, row_transform),
            *blk["norm2"],
        )
        w1, b1, w2, b2 = blk["mlp"]
        x = layer_norm(x + linear(relu(linear(x, w1, b1)), w2, b2), *blk["norm3"])
        image = layer_norm(
            image + attend(blk["i2t_attn"], image, x, cfg.heads), *blk["norm4"]
        )

    up = _upscale_embedding(image.reshape(h, w, c), weights)
    img_h, img_w = features.image_size
    logits = np.empty((NUM_MASK_TOKENS, img_h, img_w), dtype=np.float32)
    for j in range(NUM_MASK_TOKENS):
        w1, b1, w2, b2, w3, b3 = weights.hyper[j]
        vec = linear(relu(linear(relu(linear(x[j], w1, b1)), w2, b2)), w3, b3)
        coarse = up @ vec  # (4h, 4w)
        logits[j] = bilinear_resize(coarse, img_h, img_w)
    return logits


def _upscale_embedding(grid: np.ndarray, weights: DecoderWeights) -> np.ndarray:
    """(h, w, c) -> (4h, 4w, c/8): two rounds of 2x bilinear + linear + GELU."""
    h, w, _ = grid.shape
    out = bilinear_resize(grid, 2 * h, 2 * w)
    out = gelu(linear(out, *weights.up_fc1))
    out = bilinear_resize(out, 4 * h, 4 * w)
    return gelu(linear(out, *weights.up_fc2))
