import math

import numpy as np
import pytest

from conceptseg.bundle import TensorBundle
from conceptseg.errors import WeightShapeError
from conceptseg.layers import (
    AttentionParams,
    attend,
    attention_rows,
    gelu,
    layer_norm,
    linear,
    relu,
    take,
)


def test_take_checks_shape():
    b = TensorBundle()
    b.add("w", np.zeros((3, 4), dtype=np.float32))
    assert take(b, "w", (3, 4)).shape == (3, 4)
    with pytest.raises(WeightShapeError, match="'w'"):
        take(b, "w", (4, 3))


def test_take_missing_tensor():
    with pytest.raises(WeightShapeError, match="missing tensor 'absent'"):
        take(TensorBundle(), "absent", (1,))


def test_linear_matches_manual():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(3, 7))
    b = rng.normal(size=7)
    assert np.allclose(linear(x, w, b), x @ w + b, atol=1e-12)


def test_layer_norm_matches_manual():
    rng = np.random.default_rng(1)
    x = rng.normal(0, 4, size=(6, 8)).astype(np.float32)
    g = rng.normal(size=8).astype(np.float32)
    b = rng.normal(size=8).astype(np.float32)
    got = layer_norm(x, g, b)
    x64 = x.astype(np.float64)
    mu = x64.mean(-1, keepdims=True)
    var = x64.var(-1, keepdims=True)
    want = (x64 - mu) / np.sqrt(var + 1e-5) * g + b
    assert np.allclose(got, want, atol=1e-6)


def test_gelu_matches_erf_form():
    x = np.linspace(-4, 4, 33)
    want = np.array([0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0))) for v in x])
    assert np.allclose(gelu(x), want, atol=1e-12)


def test_relu():
    assert np.array_equal(relu(np.array([-2.0, 0.0, 3.0])), [0.0, 0.0, 3.0])


def test_attention_rows_are_scaled_softmax():
    rng = np.random.default_rng(2)
    q = rng.normal(size=(2, 4, 8))
    k = rng.normal(size=(2, 5, 8))
    rows = attention_rows(q, k)
    assert rows.shape == (2, 4, 5)
    assert np.allclose(rows.sum(-1), 1.0, atol=1e-9)
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(8.0)
    want = np.exp(scores - scores.max(-1, keepdims=True))
    want /= want.sum(-1, keepdims=True)
    assert np.allclose(rows, want, atol=1e-6)


def attention_oracle(params, x_q, x_kv, heads):
    # scalar-ish recompute: per head, per query row
    nq, c = x_q.shape
    d = c // heads
    q = x_q @ params.wq + params.bq
    k = x_kv @ params.wk + params.bk
    v = x_kv @ params.wv + params.bv
    out = np.zeros((nq, c))
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        for i in range(nq):
            s = np.array([q[i, sl] @ k[j, sl] for j in range(len(x_kv))]) / np.sqrt(d)
            e = np.exp(s - s.max())
            a = e / e.sum()
            out[i, sl] = sum(a[j] * v[j, sl] for j in range(len(x_kv)))
    return out @ params.wo + params.bo


def random_attention(rng, c):
    b = TensorBundle()
    for name in AttentionParams.names("a"):
        shape = (c, c) if name.endswith("weight") else (c,)
        b.add(name, rng.normal(size=shape).astype(np.float32))
    return AttentionParams(b, "a", c)


def test_attend_matches_per_head_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        c, heads = 8, 2
        params = random_attention(rng, c)
        x_q = rng.normal(size=(4, c)).astype(np.float32)
        x_kv = rng.normal(size=(6, c)).astype(np.float32)
        got = attend(params, x_q, x_kv, heads)
        want = attention_oracle(params, x_q, x_kv, heads)
        assert np.allclose(got, want, atol=1e-4)


def test_attend_row_transform_is_applied():
    rng = np.random.default_rng(4)
    c = 8
    params = random_attention(rng, c)
    x = rng.normal(size=(3, c)).astype(np.float32)
    ident = attend(params, x, x, 2, row_transform=lambda rows: rows)
    plain = attend(params, x, x, 2)
    assert np.array_equal(ident, plain)
    # collapsing every row onto key 0 must equal attending to x[0] alone
    def collapse(rows):
        out = np.zeros_like(rows)
        out[:, :, 0] = 1.0
        return out

    forced = attend(params, x, x, 2, row_transform=collapse)
    v0 = linear(x, params.wv, params.bv)[0]
    want = linear(np.tile(v0, (3, 1)), params.wo, params.bo)
    assert np.allclose(forced, want, atol=1e-5)
