"""Dense numeric kernels used throughout the engine.

Arrays are float32, row-major (C order). Every kernel is a pure function:
no shared state, safe to call from concurrent workers.
"""

from __future__ import annotations

import numpy as np

F32 = np.float32


def as_f32(x) -> np.ndarray:
    """Coerce to a C-contiguous float32 array."""
    return np.ascontiguousarray(x, dtype=F32)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along `axis` (max-subtracted).

    Output slices along `axis` are nonnegative and sum to 1.
    """
    x = np.asarray(x)
    if x.ndim == 0:
        raise ValueError("softmax requires at least one axis")
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} invalid for rank-{x.ndim} input")
    x = as_f32(x)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return (e / np.sum(e, axis=axis, keepdims=True)).astype(F32)


def l2_normalize(x: np.ndarray, axis: int = -1, eps: float = 1e-8) -> np.ndarray:
    """Scale slices along `axis` to unit Euclidean norm.

    Slices with norm <= eps are scaled by 1/eps instead, so near-zero input
    maps to near-zero output (never NaN) and output norms never exceed 1.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x)
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} invalid for rank-{x.ndim} input")
    x = as_f32(x)
    norm = np.sqrt(np.sum(np.square(x, dtype=np.float64), axis=axis, keepdims=True))
    return (x / np.maximum(norm, eps)).astype(F32)


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize an h*w or h*w*c grid with bilinear interpolation.

    Uses the align-corners=false convention: source coordinate of output
    pixel i is (i + 0.5) * in/out - 0.5, clamped to the grid. Interpolation
    is in lerp form, so constants are preserved exactly and values never
    leave the input min/max range. Same-size calls return a copy unchanged.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output extents must be >= 1")
    x = np.asarray(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[:, :, None]
    if x.ndim != 3:
        raise ValueError(f"expected h*w or h*w*c input, got shape {x.shape}")
    in_h, in_w = x.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        out = as_f32(x).copy()
        return out[:, :, 0] if squeeze else out

    grid = x.astype(np.float64)

    def axis_coords(n_out: int, n_in: int):
        centers = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        centers = np.clip(centers, 0.0, n_in - 1)
        lo = np.floor(centers).astype(np.int64)
        lo = np.minimum(lo, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = centers - lo
        return lo, hi, frac

    r0, r1, fr = axis_coords(out_h, in_h)
    c0, c1, fc = axis_coords(out_w, in_w)

    top = grid[r0][:, c0] + fc[None, :, None] * (grid[r0][:, c1] - grid[r0][:, c0])
    bot = grid[r1][:, c0] + fc[None, :, None] * (grid[r1][:, c1] - grid[r1][:, c0])
    out = (top + fr[:, None, None] * (bot - top)).astype(F32)
    return out[:, :, 0] if squeeze else out
