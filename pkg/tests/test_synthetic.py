import numpy as np
import pytest

from conceptseg.decoder import DecoderConfig, decoder_tensor_names
from conceptseg.encoder import EncoderConfig, encoder_tensor_names
from conceptseg.imgio import load_image, load_mask
from conceptseg.synthetic import (
    COLOR_COS_MAX,
    RESIDUAL_SCALE,
    decoder_shapes,
    default_state,
    encoder_shapes,
    make_model_weights,
    make_scene,
    make_translating_video,
    write_synthetic_dataset,
)


def patch_aligned(mask, patch=4):
    h, w = mask.shape
    coarse = mask.reshape(h // patch, patch, w // patch, patch)
    per_cell = coarse.any(axis=(1, 3))
    full = coarse.all(axis=(1, 3))
    return np.array_equal(per_cell, full)


def scene_colors(scene):
    obj = scene.ref_image[scene.ref_mask][0].astype(np.float64)
    bg = scene.ref_image[0, 0].astype(np.float64)
    return obj, bg


def test_scene_geometry():
    rng = np.random.default_rng(0)
    for _ in range(10):
        s = make_scene(rng)
        for img, mask in ((s.ref_image, s.ref_mask), (s.test_image, s.test_mask)):
            assert img.shape == (64, 64, 3) and img.dtype == np.uint8
            assert mask.shape == (64, 64) and mask.dtype == bool
            assert mask.any()
            assert patch_aligned(mask)
            # one flat color over the whole object
            assert len(np.unique(img[mask].reshape(-1, 3), axis=0)) == 1
        assert s.ref_mask.sum() == s.test_mask.sum()
        # border ring stays background
        assert not s.ref_mask[0].any() and not s.ref_mask[-1].any()
        assert not s.ref_mask[:, 0].any() and not s.ref_mask[:, -1].any()


def test_scene_object_color_survives_the_move():
    rng = np.random.default_rng(1)
    for _ in range(5):
        s = make_scene(rng)
        ref_color = s.ref_image[s.ref_mask][0]
        test_color = s.test_image[s.test_mask][0]
        assert np.array_equal(ref_color, test_color)


def test_scene_colors_are_separated():
    rng = np.random.default_rng(2)
    for _ in range(20):
        obj, bg = scene_colors(make_scene(rng))
        assert np.abs(obj - bg).max() >= 48
        cos = (obj @ bg) / (np.linalg.norm(obj) * np.linalg.norm(bg))
        assert cos <= COLOR_COS_MAX + 1e-12


def test_scene_determinism():
    a = make_scene(np.random.default_rng(33))
    b = make_scene(np.random.default_rng(33))
    assert np.array_equal(a.ref_image, b.ref_image)
    assert np.array_equal(a.test_image, b.test_image)
    assert np.array_equal(a.ref_mask, b.ref_mask)


def test_weight_bundle_names_and_structure():
    enc_cfg, dec_cfg = EncoderConfig(), DecoderConfig()
    bundle = make_model_weights(enc_cfg, dec_cfg)
    want = list(encoder_tensor_names(enc_cfg)) + list(decoder_tensor_names(dec_cfg))
    assert list(bundle.names()) == want
    shapes = {**encoder_shapes(enc_cfg), **decoder_shapes(dec_cfg)}
    for name, shape in shapes.items():
        assert bundle[name].shape == shape


def test_weight_bundle_init_rules():
    enc_cfg, dec_cfg = EncoderConfig(), DecoderConfig()
    bundle = make_model_weights(enc_cfg, dec_cfg)
    assert not bundle["enc.pos_embed"].any()
    assert np.array_equal(bundle["enc.block0.ln1.weight"], np.ones(32, dtype=np.float32))
    assert np.array_equal(bundle["dec.block0.norm1.weight"], np.ones(32, dtype=np.float32))
    assert not bundle["enc.patch_embed.bias"].any()
    # residual projections stay near zero so untrained refinement is tame
    for name in ("enc.block0.attn.out.weight", "dec.block0.t2i_attn.out.weight",
                 "dec.mask_prompt.weight"):
        assert np.abs(bundle[name]).max() < 20 * RESIDUAL_SCALE
    # the mask head gets a larger gain than the trunk
    head = bundle["dec.upscale.fc1.weight"].std()
    trunk = bundle["dec.block0.mlp.fc1.weight"].std()
    assert 1.5 < head / trunk < 2.5


def test_weight_bundle_determinism():
    enc_cfg, dec_cfg = EncoderConfig(), DecoderConfig()
    a = make_model_weights(enc_cfg, dec_cfg).write_bytes()
    b = make_model_weights(enc_cfg, dec_cfg).write_bytes()
    assert a == b
    c = make_model_weights(enc_cfg, dec_cfg, enc_seed=1, dec_seed=2).write_bytes()
    assert c != a


def test_default_state_is_consistent():
    state = default_state()
    assert state.encoder_cfg.embed_dim == state.decoder_cfg.embed_dim
    assert state.encoder_cfg.heads == state.decoder_cfg.heads
    names = state.weights.names()
    assert any(n.startswith("enc.") for n in names)
    assert any(n.startswith("dec.") for n in names)


def test_write_synthetic_dataset_layout(tmp_path):
    root = write_synthetic_dataset(tmp_path / "data", n_scenes=2, seed=7)
    assert sorted(p.name for p in root.iterdir()) == ["scene00", "scene01"]
    rng = np.random.default_rng(7)
    for i in range(2):
        scene = make_scene(rng)
        obj = root / f"scene{i:02d}"
        assert np.array_equal(load_image(obj / "images" / "000.png"), scene.ref_image)
        assert np.array_equal(load_image(obj / "images" / "001.png"), scene.test_image)
        assert np.array_equal(load_mask(obj / "masks" / "000.png"), scene.ref_mask)
        assert np.array_equal(load_mask(obj / "masks" / "001.png"), scene.test_mask)


def test_translating_video_slides_one_patch_per_frame():
    frames, masks = make_translating_video(seed=3, frames=6)
    assert len(frames) == len(masks) == 6
    for t in range(6):
        assert np.array_equal(masks[t], np.roll(masks[0], 4 * t, axis=1))
        assert np.array_equal(frames[t], np.roll(frames[0], 4 * t, axis=1))
    colors = np.unique(frames[0].reshape(-1, 3), axis=0)
    assert len(colors) == 2


def test_translating_video_rejects_overlong_runs():
    with pytest.raises(ValueError, match="frames"):
        make_translating_video(seed=0, frames=100)
