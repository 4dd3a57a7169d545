"""Procedural fixtures: flat-color scenes and seeded weight bundles.

Scenes are flat-color rectangles on flat backgrounds, everything aligned
to the patch grid. With the position embedding zeroed (see below), two
patches of the same color then encode to bit-identical features no matter
where they sit, which makes feature matching on untrained weights exact:
the confidence map is 1.0 on the object and strictly lower elsewhere, and
an object that only translated between reference and test produces the
same decoder output, translated.

Weight initialization:

* linear weights ~ N(0, fan_in^-0.5), biases zero, layer norms identity
* encoder position embedding zeroed - untrained features stay
  translation-consistent across aligned patches (real checkpoints loaded
  from a bundle override it)
* token tables (mask tokens, kind embeddings, frequency bank) ~ N(0, 1)
* attention output and mask-prompt projections ~ N(0, 1e-4) - small-gain
  residual init, so an untrained decoder run stays stable through the
  mask-feedback and box passes instead of amplifying them into noise
* upscaler and hypernetwork weights get a gain of 2 on top of the
  fan-in rule: five narrow GELU/ReLU layers in a row attenuate an
  untrained signal badly, and without the gain the mask logits come out
  so close together that no fusion weights can separate object from
  background

Scene colors are rejection-sampled for pairwise angular separation, not
just channel distance: normalization inside the encoder collapses
near-collinear colors onto almost identical features.

Tensors are drawn in naming-scheme order from one seeded generator per
bundle; golden checksums pinned in tests depend on that order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bundle import TensorBundle
from .decoder import NUM_MASK_TOKENS, DecoderConfig, decoder_tensor_names
from .encoder import EncoderConfig, encoder_tensor_names
from .imgio import save_image, save_mask
from .pipeline import ModelState

DEFAULT_ENCODER_SEED = 1234
# picked by sweeping seeds for fixture quality: multiscale fusion separates
# object from background on every default scene, plain scale-0 output stays
# nonempty on most, and no scene degenerates to an empty mask
DEFAULT_DECODER_SEED = 4

RESIDUAL_SCALE = 1e-4  # std of attention-output and mask-prompt projections
HEAD_GAIN = 2.0  # extra std on upscaler/hypernet weights, see module docstring
COLOR_COS_MAX = 0.85  # pairwise cosine ceiling between scene colors


def encoder_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    p, c, g = cfg.patch_size, cfg.embed_dim, cfg.grid_size
    shapes = {
        "enc.patch_embed.weight": (p * p * 3, c),
        "enc.patch_embed.bias": (c,),
        "enc.pos_embed": (g * g, c),
    }
    for i in range(cfg.depth):
        pre = f"enc.block{i}"
        shapes[f"{pre}.ln1.weight"] = (c,)
        shapes[f"{pre}.ln1.bias"] = (c,)
        for part in ("q", "k", "v", "out"):
            shapes[f"{pre}.attn.{part}.weight"] = (c, c)
            shapes[f"{pre}.attn.{part}.bias"] = (c,)
        shapes[f"{pre}.ln2.weight"] = (c,)
        shapes[f"{pre}.ln2.bias"] = (c,)
        shapes[f"{pre}.mlp.fc1.weight"] = (c, 4 * c)
        shapes[f"{pre}.mlp.fc1.bias"] = (4 * c,)
        shapes[f"{pre}.mlp.fc2.weight"] = (4 * c, c)
        shapes[f"{pre}.mlp.fc2.bias"] = (c,)
    shapes["enc.ln_f.weight"] = (c,)
    shapes["enc.ln_f.bias"] = (c,)
    return shapes


def decoder_shapes(cfg: DecoderConfig) -> dict[str, tuple[int, ...]]:
    c = cfg.embed_dim
    shapes = {
        "dec.mask_tokens": (NUM_MASK_TOKENS, c),
        "dec.pe.freqs": (2, c // 2),
        "dec.kind_embed": (4, c),
        "dec.mask_prompt.weight": (1, c),
        "dec.mask_prompt.bias": (c,),
    }
    for i in range(cfg.depth):
        pre = f"dec.block{i}"
        for attn in ("self_attn", "t2i_attn", "i2t_attn"):
            for part in ("q", "k", "v", "out"):
                shapes[f"{pre}.{attn}.{part}.weight"] = (c, c)
                shapes[f"{pre}.{attn}.{part}.bias"] = (c,)
        for n in range(1, 5):
            shapes[f"{pre}.norm{n}.weight"] = (c,)
            shapes[f"{pre}.norm{n}.bias"] = (c,)
        shapes[f"{pre}.mlp.fc1.weight"] = (c, 4 * c)
        shapes[f"{pre}.mlp.fc1.bias"] = (4 * c,)
        shapes[f"{pre}.mlp.fc2.weight"] = (4 * c, c)
        shapes[f"{pre}.mlp.fc2.bias"] = (c,)
    shapes["dec.upscale.fc1.weight"] = (c, c // 4)
    shapes["dec.upscale.fc1.bias"] = (c // 4,)
    shapes["dec.upscale.fc2.weight"] = (c // 4, c // 8)
    shapes["dec.upscale.fc2.bias"] = (c // 8,)
    for j in range(NUM_MASK_TOKENS):
        pre = f"dec.hyper{j}"
        shapes[f"{pre}.fc1.weight"] = (c, c)
        shapes[f"{pre}.fc1.bias"] = (c,)
        shapes[f"{pre}.fc2.weight"] = (c, c)
        shapes[f"{pre}.fc2.bias"] = (c,)
        shapes[f"{pre}.fc3.weight"] = (c, c // 8)
        shapes[f"{pre}.fc3.bias"] = (c // 8,)
    return shapes


_TOKEN_TABLES = ("dec.mask_tokens", "dec.kind_embed", "dec.pe.freqs")


def _init_tensor(name: str, shape: tuple[int, ...], rng) -> np.ndarray:
    if (".ln" in name or ".norm" in name) and name.endswith(".weight"):
        return np.ones(shape, dtype=np.float32)
    if name.endswith(".bias") or name == "enc.pos_embed":
        return np.zeros(shape, dtype=np.float32)
    if name in _TOKEN_TABLES:
        return rng.normal(0.0, 1.0, shape).astype(np.float32)
    if name.endswith(".out.weight") or name == "dec.mask_prompt.weight":
        return rng.normal(0.0, RESIDUAL_SCALE, shape).astype(np.float32)
    if name.startswith(("dec.upscale.", "dec.hyper")) and name.endswith(".weight"):
        return rng.normal(0.0, HEAD_GAIN * shape[0] ** -0.5, shape).astype(np.float32)
    return rng.normal(0.0, shape[0] ** -0.5, shape).astype(np.float32)


def _fill(bundle: TensorBundle, names, shapes, seed: int) -> TensorBundle:
    rng = np.random.default_rng(seed)
    for name in names:
        bundle.add(name, _init_tensor(name, shapes[name], rng))
    return bundle


def make_encoder_weights(cfg: EncoderConfig, seed: int = DEFAULT_ENCODER_SEED) -> TensorBundle:
    return _fill(TensorBundle(), encoder_tensor_names(cfg), encoder_shapes(cfg), seed)


def make_decoder_weights(cfg: DecoderConfig, seed: int = DEFAULT_DECODER_SEED) -> TensorBundle:
    return _fill(TensorBundle(), decoder_tensor_names(cfg), decoder_shapes(cfg), seed)


def make_model_weights(
    enc_cfg: EncoderConfig,
    dec_cfg: DecoderConfig,
    enc_seed: int = DEFAULT_ENCODER_SEED,
    dec_seed: int = DEFAULT_DECODER_SEED,
) -> TensorBundle:
    """One bundle carrying both encoder and decoder tensors."""
    bundle = _fill(TensorBundle(), encoder_tensor_names(enc_cfg), encoder_shapes(enc_cfg), enc_seed)
    return _fill(bundle, decoder_tensor_names(dec_cfg), decoder_shapes(dec_cfg), dec_seed)


def default_state(
    enc_seed: int = DEFAULT_ENCODER_SEED, dec_seed: int = DEFAULT_DECODER_SEED
) -> ModelState:
    """Desk-scale model: 64px input, 4px patches, width 32, depth 2."""
    enc_cfg = EncoderConfig()
    dec_cfg = DecoderConfig(embed_dim=enc_cfg.embed_dim, heads=enc_cfg.heads)
    return ModelState(enc_cfg, dec_cfg, make_model_weights(enc_cfg, dec_cfg, enc_seed, dec_seed))


@dataclass(frozen=True)
class Scene:
    """A reference/test pair sharing one flat-color object."""

    ref_image: np.ndarray
    ref_mask: np.ndarray
    test_image: np.ndarray
    test_mask: np.ndarray


def _distinct_colors(rng, n: int, min_gap: int = 48) -> list[np.ndarray]:
    """n uint8 RGB colors, pairwise at least min_gap apart (L-inf) and at
    least acos(COLOR_COS_MAX) apart in direction."""
    colors: list[np.ndarray] = []
    for _ in range(10_000):
        cand = rng.integers(32, 224, size=3)
        u = cand / np.linalg.norm(cand)
        ok = all(
            int(np.abs(cand - c).max()) >= min_gap
            and float(u @ (c / np.linalg.norm(c))) <= COLOR_COS_MAX
            for c in colors
        )
        if ok:
            colors.append(cand.astype(np.uint8))
            if len(colors) == n:
                return colors
    raise RuntimeError("could not sample distinct colors")


def _overlaps(a, b) -> bool:
    ar, ac, ah, aw = a
    br, bc, bh, bw = b
    return not (ar + ah <= br or br + bh <= ar or ac + aw <= bc or bc + bw <= ac)


def _place_rect(rng, grid: int, size_lo: int, size_hi: int, forbidden=()) -> tuple | None:
    """Random patch-aligned rectangle (r, c, h, w), one patch in from the
    border, overlapping nothing in `forbidden`. None if placement fails."""
    for _ in range(200):
        h = int(rng.integers(size_lo, size_hi + 1))
        w = int(rng.integers(size_lo, size_hi + 1))
        r = int(rng.integers(1, grid - 1 - h + 1))
        c = int(rng.integers(1, grid - 1 - w + 1))
        rect = (r, c, h, w)
        if all(not _overlaps(rect, f) for f in forbidden):
            return rect
    return None


def _paint(image: np.ndarray, rect, patch: int, color: np.ndarray) -> None:
    r, c, h, w = rect
    image[r * patch : (r + h) * patch, c * patch : (c + w) * patch] = color


def _rect_mask(resolution: int, rect, patch: int) -> np.ndarray:
    mask = np.zeros((resolution, resolution), dtype=bool)
    r, c, h, w = rect
    mask[r * patch : (r + h) * patch, c * patch : (c + w) * patch] = True
    return mask


def make_scene(rng, resolution: int = 64, patch: int = 4) -> Scene:
    """One scene: the object keeps its color and size but moves between the
    reference and test images; half the scenes add a static distractor
    rectangle of a third color."""
    grid = resolution // patch
    bg, obj_color, distractor_color = _distinct_colors(rng, 3)

    obj_ref = _place_rect(rng, grid, 3, 7)
    h, w = obj_ref[2], obj_ref[3]
    obj_test = obj_ref
    for _ in range(200):
        r = int(rng.integers(1, grid - 1 - h + 1))
        c = int(rng.integers(1, grid - 1 - w + 1))
        if (r, c) != (obj_ref[0], obj_ref[1]):
            obj_test = (r, c, h, w)
            break

    distractor = None
    if rng.random() < 0.5:
        distractor = _place_rect(rng, grid, 2, 4, forbidden=(obj_ref, obj_test))

    ref = np.empty((resolution, resolution, 3), dtype=np.uint8)
    ref[:] = bg
    test = ref.copy()
    if distractor is not None:
        _paint(ref, distractor, patch, distractor_color)
        _paint(test, distractor, patch, distractor_color)
    _paint(ref, obj_ref, patch, obj_color)
    _paint(test, obj_test, patch, obj_color)
    return Scene(
        ref_image=ref,
        ref_mask=_rect_mask(resolution, obj_ref, patch),
        test_image=test,
        test_mask=_rect_mask(resolution, obj_test, patch),
    )


def write_synthetic_dataset(
    root, n_scenes: int = 20, seed: int = 0, resolution: int = 64, patch: int = 4
) -> Path:
    """Write n_scenes scenes in the evaluation dataset layout; returns root."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for i in range(n_scenes):
        scene = make_scene(rng, resolution, patch)
        obj = root / f"scene{i:02d}"
        save_image(obj / "images" / "000.png", scene.ref_image)
        save_image(obj / "images" / "001.png", scene.test_image)
        save_mask(obj / "masks" / "000.png", scene.ref_mask)
        save_mask(obj / "masks" / "001.png", scene.test_mask)
    return root


def make_translating_video(
    seed: int = 0, frames: int = 10, resolution: int = 64, patch: int = 4
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Frames of one flat-color square sliding right one patch per frame.

    Returns (images, masks); frame 0 doubles as the reference pair.
    """
    grid = resolution // patch
    rng = np.random.default_rng(seed)
    bg, obj_color = _distinct_colors(rng, 2)
    size = int(rng.integers(3, 5 + 1))
    row = int(rng.integers(1, grid - 1 - size + 1))
    col0 = 1
    if col0 + (frames - 1) + size > grid - 1:
        raise ValueError(f"{frames} frames do not fit a size-{size} object")
    images, masks = [], []
    for t in range(frames):
        rect = (row, col0 + t, size, size)
        img = np.empty((resolution, resolution, 3), dtype=np.uint8)
        img[:] = bg
        _paint(img, rect, patch, obj_color)
        images.append(img)
        masks.append(_rect_mask(resolution, rect, patch))
    return images, masks
