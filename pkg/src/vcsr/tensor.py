"""Deterministic CPU inference kernels on (channels, height, width) float32 arrays.

All kernels are pure functions: no shared mutable state, no randomness, so the
same inputs always produce the same outputs.  Convolution is im2col + sgemm
with row tiling to bound intermediate memory at large resolutions.

Coordinate convention (used by every resampling kernel here and by the
keypoint grid): pixel centers sit at (i + 0.5)/N mapped into [-1, 1], so the
normalized-to-pixel transform is x_pix = (x + 1)/2 * N - 0.5.  Sampling
outside the frame clamps to the border.
"""

import numpy as np

from . import ShapeMismatch

# im2col tile budget (floats); keeps 1024x1024-scale convolutions in memory
_COL_BUDGET = 16 * 1024 * 1024


def check_chw(x, name="tensor"):
    """Reject arrays that are not rank-3 float32."""
    if not isinstance(x, np.ndarray) or x.ndim != 3:
        raise ShapeMismatch(f"{name} must be a (C,H,W) array, got {getattr(x, 'shape', None)}")
    return np.ascontiguousarray(x, dtype=np.float32)


def conv2d(x, weight, bias, stride=1, padding=None):
    """2-D convolution (cross-correlation) with odd square-ish kernels.

    weight is (out_ch, in_ch, kh, kw); padding defaults to (k-1)//2 "same".
    """
    x = check_chw(x, "conv input")
    weight = np.asarray(weight, dtype=np.float32)
    if weight.ndim != 4:
        raise ShapeMismatch(f"conv weight must be 4-D, got {weight.shape}")
    out_ch, in_ch, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeMismatch(f"kernel dims must be odd, got {kh}x{kw}")
    if stride < 1:
        raise ShapeMismatch(f"stride must be >= 1, got {stride}")
    c, h, w = x.shape
    if in_ch != c:
        raise ShapeMismatch(f"conv expects {in_ch} input channels, input has {c}")
    bias = np.zeros(out_ch, np.float32) if bias is None else np.asarray(bias, dtype=np.float32)
    if bias.shape != (out_ch,):
        raise ShapeMismatch(f"bias must have {out_ch} entries, got {bias.shape}")

    if padding is None:
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
    else:
        ph = pw = int(padding)
    oh = (h + 2 * ph - kh) // stride + 1
    ow = (w + 2 * pw - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeMismatch(f"conv output would be empty: input {h}x{w}, kernel {kh}x{kw}")

    padded = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    w_mat = weight.reshape(out_ch, in_ch * kh * kw)

    out = np.empty((out_ch, oh, ow), np.float32)
    rows_per_tile = max(1, _COL_BUDGET // (in_ch * kh * kw * ow))
    for r0 in range(0, oh, rows_per_tile):
        rows = min(oh, r0 + rows_per_tile) - r0
        # offset-slice im2col: one near-contiguous copy per kernel tap
        cols = np.empty((in_ch, kh, kw, rows, ow), np.float32)
        y0 = r0 * stride
        for i in range(kh):
            for j in range(kw):
                cols[:, i, j] = padded[:, y0 + i:y0 + i + (rows - 1) * stride + 1:stride,
                                       j:j + (ow - 1) * stride + 1:stride]
        mat = cols.reshape(in_ch * kh * kw, rows * ow)
        out[:, r0:r0 + rows] = (w_mat @ mat).reshape(out_ch, rows, ow)
    out += bias[:, None, None]
    return out


def batchnorm_infer(x, mean, var, gamma, beta, eps=1e-5):
    """Inference-mode batch normalization with per-channel statistics."""
    x = check_chw(x, "batchnorm input")
    c = x.shape[0]
    mean, var, gamma, beta = (np.asarray(p, dtype=np.float32) for p in (mean, var, gamma, beta))
    for name, p in (("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)):
        if p.shape != (c,):
            raise ShapeMismatch(f"batchnorm {name} must have {c} entries, got {p.shape}")
    if np.any(var < 0):
        raise ShapeMismatch("batchnorm variance must be non-negative")
    scale = gamma / np.sqrt(var + np.float32(eps))
    return (x - mean[:, None, None]) * scale[:, None, None] + beta[:, None, None]


def relu(x):
    return np.maximum(x, 0.0).astype(np.float32, copy=False)


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float32)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def avgpool2(x):
    """Average pooling over non-overlapping 2x2 blocks; halves both spatial dims."""
    x = check_chw(x, "pool input")
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeMismatch(f"avgpool2 needs even dims, got {h}x{w}")
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4), dtype=np.float32)


def _double_axis(x, axis):
    # factor-2 bilinear with half-texel centers: out = 0.25*prev + 0.75*self pairs
    n = x.shape[axis]
    lo = np.take(x, np.r_[0, np.arange(n - 1)], axis=axis)  # clamped i-1
    hi = np.take(x, np.r_[np.arange(1, n), n - 1], axis=axis)  # clamped i+1
    even = 0.75 * x + 0.25 * lo
    odd = 0.75 * x + 0.25 * hi
    out_shape = list(x.shape)
    out_shape[axis] = 2 * n
    out = np.empty(out_shape, np.float32)
    sl_even = [slice(None)] * x.ndim
    sl_even[axis] = slice(0, 2 * n, 2)
    sl_odd = [slice(None)] * x.ndim
    sl_odd[axis] = slice(1, 2 * n, 2)
    out[tuple(sl_even)] = even
    out[tuple(sl_odd)] = odd
    return out


def upsample2(x, mode="bilinear"):
    """Double both spatial dims; nearest replication or bilinear interpolation."""
    x = check_chw(x, "upsample input")
    if mode == "nearest":
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)
    if mode == "bilinear":
        return _double_axis(_double_axis(x, 1), 2)
    raise ShapeMismatch(f"unknown upsample mode {mode!r}")


def softmax_channels(x):
    """Softmax across the channel axis at every pixel (max-subtracted)."""
    x = check_chw(x, "softmax input")
    z = x - x.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def softmax_spatial(x):
    """Softmax over all pixels within each channel (max-subtracted)."""
    x = check_chw(x, "softmax input")
    c, h, w = x.shape
    flat = x.reshape(c, h * w)
    z = flat - flat.max(axis=1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=1, keepdims=True)).reshape(c, h, w)


def identity_grid(h, w):
    """Normalized sampling grid (h, w, 2) whose coords map each pixel to itself."""
    gx = (2.0 * (np.arange(w, dtype=np.float32) + 0.5) / w) - 1.0
    gy = (2.0 * (np.arange(h, dtype=np.float32) + 0.5) / h) - 1.0
    grid = np.empty((h, w, 2), np.float32)
    grid[..., 0] = gx[None, :]
    grid[..., 1] = gy[:, None]
    return grid


def grid_sample(x, coords):
    """Bilinear sampling of x at normalized coords (H,W,2); border clamped.

    coords[..., 0] is x (width axis), coords[..., 1] is y.  Output spatial
    dims equal the grid's.
    """
    x = check_chw(x, "grid_sample input")
    coords = np.asarray(coords, dtype=np.float32)
    if coords.ndim != 3 or coords.shape[2] != 2:
        raise ShapeMismatch(f"coords must be (H,W,2), got {coords.shape}")
    c, h, w = x.shape
    px = np.clip((coords[..., 0] + 1.0) * 0.5 * w - 0.5, 0.0, w - 1.0)
    py = np.clip((coords[..., 1] + 1.0) * 0.5 * h - 0.5, 0.0, h - 1.0)
    # snap coordinates within 1e-5 texel of a center so exact grids sample exactly
    px_r = np.round(px)
    py_r = np.round(py)
    px = np.where(np.abs(px - px_r) < 1e-5, px_r, px)
    py = np.where(np.abs(py - py_r) < 1e-5, py_r, py)
    x0 = px.astype(np.int64)
    y0 = py.astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (px - x0).astype(np.float32)
    fy = (py - y0).astype(np.float32)
    top = x[:, y0, x0] * (1.0 - fx) + x[:, y0, x1] * fx
    bot = x[:, y1, x0] * (1.0 - fx) + x[:, y1, x1] * fx
    return (top * (1.0 - fy) + bot * fy).astype(np.float32, copy=False)


def resize_bilinear(x, out_h, out_w):
    """Bilinear resize to (out_h, out_w); same convention as grid_sample."""
    return grid_sample(x, identity_grid(out_h, out_w))


def mat2_inverse(m, eps=1e-8):
    """Inverse of a 2x2 matrix; identity fallback (flagged) when near singular.

    Returns (inverse, degenerate_flag); never raises on singular input.
    """
    m = np.asarray(m, dtype=np.float32)
    if m.shape != (2, 2):
        raise ShapeMismatch(f"mat2_inverse expects (2,2), got {m.shape}")
    det = float(m[0, 0]) * float(m[1, 1]) - float(m[0, 1]) * float(m[1, 0])
    if abs(det) < eps:
        return np.eye(2, dtype=np.float32), True
    inv = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]], np.float32) / np.float32(det)
    return inv, False
