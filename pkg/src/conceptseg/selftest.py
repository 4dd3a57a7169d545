"""Self-contained invariant suite for the `selftest` CLI command.

Each check re-derives its expectation independently (closed forms, brute
force loops, finite differences) rather than trusting the code under test.
Runs in a few seconds with no test framework; the pytest suite covers the
same ground more exhaustively.
"""

from __future__ import annotations

import numpy as np

from .bundle import TensorBundle
from .concept import LocationPrior, confidence_map, register_concept
from .decoder import (
    AttentionBias,
    encode_prompts,
    guided_cross_attention,
    semantic_prompt_tokens,
)
from .encoder import downsample_mask, encode_image
from .errors import BundleFormatError
from .evalkit import band_depth, boundary_band, miou
from .kernels import bilinear_resize, l2_normalize, softmax
from .pipeline import (
    ScaleWeights,
    fit_scale_weights_from_logits,
    fuse_scales,
    fusion_loss_and_grad,
    segment,
)
from .synthetic import default_state, make_scene


def _check(cond, msg: str):
    if not cond:
        raise AssertionError(msg)


def check_softmax():
    rng = np.random.default_rng(11)
    x = rng.normal(0, 3, (4, 7)).astype(np.float32)
    s = softmax(x, axis=1)
    sums = np.abs(np.asarray(s, dtype=np.float64).sum(axis=1) - 1.0)
    _check(sums.max() < 1e-6, f"row sums off by {sums.max():.2e}")
    u = softmax(np.zeros(2, dtype=np.float32), axis=0)
    _check(np.allclose(u, [0.5, 0.5]), f"uniform case gave {u}")


def check_l2_normalize():
    rng = np.random.default_rng(12)
    x = rng.normal(0, 2, (5, 8)).astype(np.float32)
    y = l2_normalize(x, axis=1)
    norms = np.sqrt((y.astype(np.float64) ** 2).sum(axis=1))
    _check(np.abs(norms - 1).max() < 1e-5, "row norms not 1")
    _check(np.abs(l2_normalize(y, axis=1) - y).max() < 1e-6, "not idempotent")
    _check(np.all(l2_normalize(np.zeros(3, dtype=np.float32), axis=0) == 0), "zero vector moved")


def check_bilinear():
    rng = np.random.default_rng(13)
    x = rng.normal(0, 1, (5, 4)).astype(np.float32)
    _check(np.array_equal(bilinear_resize(x, 5, 4), x), "same-size not identity")
    const = np.full((3, 3), 5.0, dtype=np.float32)
    up = bilinear_resize(const, 7, 9)
    _check(np.all(up == 5.0), "constant not preserved")
    big = bilinear_resize(x, 11, 13)
    _check(big.min() >= x.min() - 1e-6 and big.max() <= x.max() + 1e-6, "overshoot")


def check_bundle_roundtrip():
    b = TensorBundle()
    rng = np.random.default_rng(14)
    t = rng.normal(0, 1, (3, 4)).astype(np.float32)
    t[0, 0] = np.nan
    b.add("w", t)
    blob = b.write_bytes()
    again = TensorBundle.read_bytes(blob).write_bytes()
    _check(blob == again, "round-trip not bit-exact")
    try:
        TensorBundle.read_bytes(b"JUNK" + blob[4:])
        raise AssertionError("bad magic accepted")
    except BundleFormatError:
        pass


def check_guided_attention():
    rng = np.random.default_rng(15)
    a = softmax(rng.normal(0, 1, (5, 16)).astype(np.float32), axis=-1)
    s = softmax(rng.normal(0, 1, 16).astype(np.float32), axis=0)
    out = guided_cross_attention(a, AttentionBias(alpha=0.0, s_flat=s))
    _check(np.abs(out - softmax(a, axis=-1)).max() == 0, "alpha=0 is not softmax(A)")
    out = guided_cross_attention(a, AttentionBias(alpha=0.7, s_flat=s))
    _check(np.abs(out.sum(axis=-1) - 1).max() < 1e-6, "rows not normalized")
    pre = a + 0.7 * s
    _check(
        np.all(np.argsort(out, axis=-1) == np.argsort(pre, axis=-1)),
        "row ordering changed",
    )


def check_prompt_tokens():
    state = default_state()
    dec = state.decoder
    prior = LocationPrior((32.0, 32.0), (8.0, 8.0), 1.0, -1.0)
    toks = encode_prompts(prior, (64, 64), dec)
    _check(toks.tokens.shape == (2, dec.cfg.embed_dim), "bad token shape")
    # same point as positive and negative: tokens differ by the kind rows
    same_point = LocationPrior((32.0, 32.0), (32.0, 32.0), 1.0, 1.0)
    toks2 = encode_prompts(same_point, (64, 64), dec)
    kind_gap = dec.kind_embed[0] - dec.kind_embed[1]
    _check(
        np.abs((toks2.tokens[0] - toks2.tokens[1]) - kind_gap).max() < 1e-6,
        "kind embedding not additive",
    )


def check_semantic_tokens():
    state = default_state()
    dec = state.decoder
    prior = LocationPrior((10.0, 10.0), (50.0, 50.0), 1.0, -1.0)
    toks = encode_prompts(prior, (64, 64), dec)
    c = dec.cfg.embed_dim
    out = semantic_prompt_tokens(np.zeros(c, dtype=np.float32), dec.mask_tokens, toks)
    expect = np.concatenate([dec.mask_tokens, toks.tokens], axis=0)
    _check(np.array_equal(out, expect), "zero target changed tokens")


def check_fuse_scales():
    rng = np.random.default_rng(16)
    m = rng.normal(0, 2, (3, 8, 8)).astype(np.float32)
    out = fuse_scales(m[0], m[1], m[2], ScaleWeights(1.0, 0.0))
    _check(np.array_equal(out, m[0]), "w=(1,0) is not scale 1")
    mean = fuse_scales(m[0], m[1], m[2], ScaleWeights())
    _check(np.abs(mean - m.mean(axis=0)).max() < 1e-6, "init weights not the mean")


def check_fit_gradient():
    rng = np.random.default_rng(17)
    scales = rng.normal(0, 2, (3, 12, 12))
    gt = (rng.random((12, 12)) > 0.5).astype(np.float64)
    for _ in range(3):
        w = rng.normal(0, 0.5, 2)
        _, grad = fusion_loss_and_grad(w, scales, gt)
        eps = 1e-6
        for k in range(2):
            wp, wm = w.copy(), w.copy()
            wp[k] += eps
            wm[k] -= eps
            lp, _ = fusion_loss_and_grad(wp, scales, gt)
            lm, _ = fusion_loss_and_grad(wm, scales, gt)
            fd = (lp - lm) / (2 * eps)
            rel = abs(grad[k] - fd) / max(abs(fd), 1e-12)
            _check(rel < 1e-4, f"gradient off by rel {rel:.2e}")


def check_metrics():
    a = np.zeros((6, 6), dtype=bool)
    a[1:4, 1:4] = True
    _check(miou(a, a) == 1.0, "identical masks not 1")
    b = np.zeros((6, 6), dtype=bool)
    b[4:, 4:] = True
    _check(miou(a, b) == 0.0, "disjoint masks not 0")
    full = np.ones((4, 8), dtype=bool)
    half = np.zeros((4, 8), dtype=bool)
    half[:, :4] = True
    _check(miou(half, full) == 0.5, "half overlap not 0.5")
    _check(miou(np.zeros((3, 3), bool), np.zeros((3, 3), bool)) == 1.0, "both-empty not 1")
    # band oracle: pixel is in the band iff its L1 distance to background
    # (the image border counts as background) is <= depth
    rng = np.random.default_rng(18)
    m = rng.random((7, 7)) > 0.4
    d = band_depth(m.shape)
    band = boundary_band(m, d)
    h, w = m.shape
    for r in range(h):
        for c in range(w):
            if not m[r, c]:
                _check(not band[r, c], "band outside mask")
                continue
            dist = min(r + 1, c + 1, h - r, w - c)
            for rr in range(h):
                for cc in range(w):
                    if not m[rr, cc]:
                        dist = min(dist, abs(r - rr) + abs(c - cc))
            _check(band[r, c] == (dist <= d), f"band wrong at {(r, c)}")


def check_confidence_oracle():
    state = default_state()
    rng = np.random.default_rng(19)
    scene = make_scene(rng)
    concept = register_concept(
        scene.ref_image, scene.ref_mask.astype(np.float32), state.encoder_cfg, state.weights
    )
    features = encode_image(scene.test_image, state.encoder_cfg, state.weights)
    conf = confidence_map(concept, features)
    grid = features.grid.astype(np.float64)
    h, w, _ = grid.shape
    for r in range(0, h, 3):
        for c in range(0, w, 3):
            f = grid[r, c]
            f = f / max(np.sqrt((f**2).sum()), 1e-8)
            sims = [float(np.dot(f, t)) for t in concept.locals.astype(np.float64)]
            want = float(np.clip(np.mean(sims), -1.0, 1.0))
            _check(abs(conf.scores[r, c] - want) < 1e-5, f"confidence off at {(r, c)}")


def check_downsample_mask():
    mask = np.zeros((64, 64), dtype=np.float32)
    mask[8:24, 12:32] = 1.0
    feat = downsample_mask(mask, (16, 16))
    want = np.zeros((16, 16), dtype=np.float32)
    want[2:6, 3:8] = 1.0
    _check(np.array_equal(feat[:, :, 0], want), "patch-aligned mask not exact")


def check_frozen_fit():
    state = default_state()
    before = state.weights.write_bytes()
    rng = np.random.default_rng(20)
    scales = rng.normal(0, 1, (3, 16, 16))
    gt = (rng.random((16, 16)) > 0.5).astype(np.float64)
    fit_scale_weights_from_logits(scales, gt, iters=50)
    _check(state.weights.write_bytes() == before, "weights changed during fit")


def check_end_to_end():
    state = default_state()
    rng = np.random.default_rng(21)
    scene = make_scene(rng)
    concept = register_concept(
        scene.ref_image, scene.ref_mask.astype(np.float32), state.encoder_cfg, state.weights
    )
    res = segment(concept, scene.test_image, state)
    x, y = res.prior.positive
    _check(scene.test_mask[int(y), int(x)], "positive point outside the object")
    _check(res.fused.shape == scene.test_mask.shape, "bad output shape")
    _check(np.array_equal(res.mask, res.fused > 0), "mask is not thresholded logits")


CHECKS = [
    ("softmax", check_softmax),
    ("l2-normalize", check_l2_normalize),
    ("bilinear-resize", check_bilinear),
    ("bundle-roundtrip", check_bundle_roundtrip),
    ("guided-attention", check_guided_attention),
    ("prompt-tokens", check_prompt_tokens),
    ("semantic-tokens", check_semantic_tokens),
    ("fuse-scales", check_fuse_scales),
    ("fit-gradient", check_fit_gradient),
    ("metrics", check_metrics),
    ("confidence-oracle", check_confidence_oracle),
    ("downsample-mask", check_downsample_mask),
    ("frozen-fit", check_frozen_fit),
    ("end-to-end", check_end_to_end),
]


def run(out=None) -> int:
    """Run every check; returns the number of failures."""
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
        except AssertionError as e:
            failures += 1
            print(f"FAIL {name}: {e}", file=out)
        except Exception as e:  # noqa: BLE001 - report, keep running
            failures += 1
            print(f"ERROR {name}: {type(e).__name__}: {e}", file=out)
        else:
            print(f"ok   {name}", file=out)
    if failures:
        print(f"{failures} of {len(CHECKS)} checks failed", file=out)
    else:
        print(f"all {len(CHECKS)} checks passed", file=out)
    return failures
