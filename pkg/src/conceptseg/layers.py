"""Shared neural building blocks for the encoder and decoder.

All functions operate on float32 numpy arrays and are pure.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .bundle import TensorBundle
from .errors import WeightShapeError
from .kernels import softmax

LN_EPS = 1e-5


def take(weights: TensorBundle, name: str, shape: tuple[int, ...]) -> np.ndarray:
    """Fetch a named tensor, validating its shape against the config."""
    if name not in weights:
        raise WeightShapeError(f"weights bundle is missing tensor {name!r}")
    arr = weights[name]
    if arr.shape != shape:
        raise WeightShapeError(
            f"tensor {name!r} has shape {arr.shape}, config requires {shape}"
        )
    return arr


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x @ w + b with w stored (in_features, out_features)."""
    return (x @ w + b).astype(np.float32)


def layer_norm(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """LayerNorm over the last axis, eps pinned to 1e-5."""
    x64 = x.astype(np.float64)
    mean = x64.mean(axis=-1, keepdims=True)
    var = x64.var(axis=-1, keepdims=True)
    normed = (x64 - mean) / np.sqrt(var + LN_EPS)
    return (normed * weight + bias).astype(np.float32)


def gelu(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float32)
    return (0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))).astype(np.float32)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0).astype(np.float32)


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    """(n, c) -> (heads, n, c // heads)."""
    n, c = x.shape
    return x.reshape(n, heads, c // heads).transpose(1, 0, 2)


def merge_heads(x: np.ndarray) -> np.ndarray:
    """(heads, n, d) -> (n, heads * d)."""
    h, n, d = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * d)


def attention_rows(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Row-stochastic attention maps softmax(q k^T / sqrt(d)) per head.

    q: (heads, nq, d), k: (heads, nk, d) -> (heads, nq, nk).
    """
    d = q.shape[-1]
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(np.float32(d))
    return softmax(scores, axis=-1)


class AttentionParams:
    """q/k/v/out projection weights for one attention layer."""

    def __init__(self, weights: TensorBundle, prefix: str, c: int):
        self.wq = take(weights, f"{prefix}.q.weight", (c, c))
        self.bq = take(weights, f"{prefix}.q.bias", (c,))
        self.wk = take(weights, f"{prefix}.k.weight", (c, c))
        self.bk = take(weights, f"{prefix}.k.bias", (c,))
        self.wv = take(weights, f"{prefix}.v.weight", (c, c))
        self.bv = take(weights, f"{prefix}.v.bias", (c,))
        self.wo = take(weights, f"{prefix}.out.weight", (c, c))
        self.bo = take(weights, f"{prefix}.out.bias", (c,))

    @staticmethod
    def names(prefix: str) -> list[str]:
        return [
            f"{prefix}.{proj}.{param}"
            for proj in ("q", "k", "v", "out")
            for param in ("weight", "bias")
        ]


def attend(
    params: AttentionParams,
    x_q: np.ndarray,
    x_kv: np.ndarray,
    heads: int,
    row_transform=None,
) -> np.ndarray:
    """Multi-head attention of queries x_q over keys/values x_kv.

    `row_transform`, when given, maps the post-softmax attention rows
    (heads, nq, nk) to modified rows before values are aggregated.
    """
    q = split_heads(linear(x_q, params.wq, params.bq), heads)
    k = split_heads(linear(x_kv, params.wk, params.bk), heads)
    v = split_heads(linear(x_kv, params.wv, params.bv), heads)
    rows = attention_rows(q, k)
    if row_transform is not None:
        rows = row_transform(rows)
    out = merge_heads(rows @ v)
    return linear(out, params.wo, params.bo)
