"""Numeric kernels against independent re-implementations."""

import numpy as np

from conceptseg.kernels import bilinear_resize, l2_normalize, softmax


def naive_softmax(x, axis):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def naive_resize(x, out_h, out_w):
    # half-pixel sampling with explicit gather loops, no shared code
    in_h, in_w = x.shape[:2]
    out = np.zeros((out_h, out_w) + x.shape[2:], dtype=np.float64)
    for r in range(out_h):
        for c in range(out_w):
            sy = (r + 0.5) * in_h / out_h - 0.5
            sx = (c + 0.5) * in_w / out_w - 0.5
            y0 = int(np.floor(sy))
            x0 = int(np.floor(sx))
            fy, fx = sy - y0, sx - x0
            acc = 0.0
            for dy, wy in ((0, 1 - fy), (1, fy)):
                for dx, wx in ((0, 1 - fx), (1, fx)):
                    yy = min(max(y0 + dy, 0), in_h - 1)
                    xx = min(max(x0 + dx, 0), in_w - 1)
                    acc = acc + wy * wx * x[yy, xx].astype(np.float64)
            out[r, c] = acc
    return out


def test_softmax_matches_naive():
    rng = np.random.default_rng(0)
    for _ in range(50):
        shape = tuple(rng.integers(1, 7, size=rng.integers(1, 4)))
        x = rng.normal(0, 5, shape)
        axis = int(rng.integers(0, len(shape)))
        got = softmax(x, axis=axis)
        assert np.allclose(got, naive_softmax(x, axis), atol=1e-12)
        assert np.allclose(got.sum(axis=axis), 1.0, atol=1e-12)


def test_softmax_shift_invariant_and_stable():
    x = np.array([1e4, 1e4 + 1.0, -1e4])
    got = softmax(x)
    assert np.all(np.isfinite(got))
    assert np.allclose(got, softmax(x - 1e4), atol=1e-12)


def test_l2_normalize_matches_naive():
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = rng.normal(0, 3, (rng.integers(1, 8), rng.integers(1, 8)))
        got = l2_normalize(x, axis=-1)
        want = x / (np.sqrt((x * x).sum(axis=-1, keepdims=True)) + 1e-8)
        assert np.allclose(got, want, atol=1e-12)
        norms = np.linalg.norm(got, axis=-1)
        assert np.all(norms <= 1.0 + 1e-9)


def test_l2_normalize_zero_rows_stay_finite():
    x = np.zeros((3, 4))
    got = l2_normalize(x)
    assert np.all(got == 0.0)


def test_bilinear_resize_identity_is_copy():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 7, 3)).astype(np.float32)
    got = bilinear_resize(x, 5, 7)
    assert np.array_equal(got, x)
    assert got is not x


def test_bilinear_resize_matches_naive():
    rng = np.random.default_rng(3)
    for _ in range(25):
        in_h, in_w = rng.integers(1, 9, size=2)
        out_h, out_w = rng.integers(1, 17, size=2)
        ch = int(rng.integers(1, 4))
        x = rng.normal(size=(in_h, in_w, ch)).astype(np.float32)
        got = bilinear_resize(x, int(out_h), int(out_w))
        want = naive_resize(x, int(out_h), int(out_w))
        assert got.dtype == np.float32
        assert np.allclose(got, want, atol=1e-5)


def test_bilinear_resize_2d_input():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(4, 4)).astype(np.float32)
    got = bilinear_resize(x, 8, 8)
    assert got.shape == (8, 8)
    assert np.allclose(got, naive_resize(x[:, :, None], 8, 8)[:, :, 0], atol=1e-5)


def test_bilinear_resize_constant_preserved():
    x = np.full((3, 5), 2.5, dtype=np.float32)
    got = bilinear_resize(x, 11, 2)
    assert np.allclose(got, 2.5, atol=1e-6)


def test_bilinear_resize_bounded_by_input_range():
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.normal(size=(6, 6)).astype(np.float32)
        got = bilinear_resize(x, 13, 3)
        assert got.min() >= x.min() - 1e-6
        assert got.max() <= x.max() + 1e-6
