"""Dense float64 tensor kernels: matmul, 2D convolution/pooling, reductions, RNG.

All arrays are C-order float64 with the batch as the leading dimension.
Convolution is cross-correlation (no kernel flip). The pooling kernels use
"ceil mode": window starts advance by the stride and partial windows at the
bottom/right borders are truncated to the image, with no padding.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ConfigError, ShapeError


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two 2-D arrays, accumulated in float64."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def sign(t: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) == 0 (minimal-norm subgradient of |.|)."""
    return np.sign(np.asarray(t, dtype=np.float64))


def lp_norm(t: np.ndarray, r: int) -> float:
    """(1/r) * sum(|t_i|^r) for r in {1, 2}."""
    if r not in (1, 2):
        raise ConfigError(f"lp_norm order must be 1 or 2, got {r}")
    t = np.asarray(t, dtype=np.float64)
    if r == 1:
        return float(np.abs(t).sum())
    return float(0.5 * np.square(t).sum())


def rng_stream(seed: int, tag: str) -> np.random.Generator:
    """Deterministic PCG64 generator for (seed, purpose tag).

    The tag is hashed so that weight init, shuffling, dropout, augmentation
    and noise never share a stream. Identical (seed, tag) gives an identical
    draw sequence on every platform (PCG64 is platform independent).
    """
    tag_int = int.from_bytes(hashlib.sha256(tag.encode()).digest()[:8], "little")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, tag_int])))


def gaussian_fill(shape, mean: float, stddev: float, rng: np.random.Generator) -> np.ndarray:
    """Tensor of N(mean, stddev^2) draws from the given generator."""
    if stddev < 0:
        raise ConfigError(f"stddev must be non-negative, got {stddev}")
    return rng.normal(mean, stddev, size=shape)


# ---------------------------------------------------------------------------
# 2D convolution (cross-correlation)
# ---------------------------------------------------------------------------

def conv_output_hw(h: int, w: int, kernel, pad, stride) -> tuple[int, int]:
    """Output spatial extents; raises ConfigError when they are not positive integers."""
    kh, kw = kernel
    ph, pw = pad
    sh, sw = stride
    num_h = h + 2 * ph - kh
    num_w = w + 2 * pw - kw
    if num_h < 0 or num_w < 0 or num_h % sh or num_w % sw:
        raise ConfigError(
            f"conv geometry invalid: input {h}x{w}, kernel {kh}x{kw}, "
            f"pad {ph}x{pw}, stride {sh}x{sw} gives non-integral output extent"
        )
    return num_h // sh + 1, num_w // sw + 1


def _window_view(x: np.ndarray, kernel, stride, out_hw):
    """Read-only (N, C, Ho, Wo, kh, kw) sliding-window view of x."""
    kh, kw = kernel
    sh, sw = stride
    ho, wo = out_hw
    n, c = x.shape[:2]
    sn, sc, srow, scol = x.strides
    return as_strided(
        x, (n, c, ho, wo, kh, kw), (sn, sc, srow * sh, scol * sw, srow, scol)
    )


def conv2d(x, filters, pad=(0, 0), stride=(1, 1), bias=None) -> np.ndarray:
    """Cross-correlate x (N,C,H,W) or (C,H,W) with filters (F,C,kh,kw).

    Out-of-bounds reads of the zero-padded input are zero. Returns
    (N,F,Ho,Wo), or (F,Ho,Wo) when the input had no batch axis.
    """
    x = np.asarray(x, dtype=np.float64)
    filters = np.asarray(filters, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or filters.ndim != 4:
        raise ShapeError(f"conv2d expects (N,C,H,W) and (F,C,kh,kw), got {x.shape} and {filters.shape}")
    if x.shape[1] != filters.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs filters {filters.shape}")
    ph, pw = pad
    kh, kw = filters.shape[2:]
    out_hw = conv_output_hw(x.shape[2], x.shape[3], (kh, kw), pad, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _window_view(xp, (kh, kw), stride, out_hw)
    out = np.tensordot(cols, filters, axes=((1, 4, 5), (1, 2, 3)))  # N,Ho,Wo,F
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return out[0] if single else out


def conv2d_weight_grad(x, dy, kernel, pad, stride):
    """Gradient of a conv2d output contraction w.r.t. filters and bias.

    x is the (N,C,H,W) layer input, dy the (N,F,Ho,Wo) cotangent at the
    output. Returns (dw, db) with dw shaped (F,C,kh,kw).
    """
    x = np.asarray(x, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    ph, pw = pad
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _window_view(xp, kernel, stride, dy.shape[2:])
    dw = np.tensordot(cols, dy, axes=((0, 2, 3), (0, 2, 3)))  # C,kh,kw,F
    dw = np.ascontiguousarray(dw.transpose(3, 0, 1, 2))
    db = dy.sum(axis=(0, 2, 3))
    return dw, db


def conv2d_input_grad(dy, filters, pad, stride, in_hw) -> np.ndarray:
    """Cotangent at the conv2d input: transposed convolution of dy with filters.

    Accumulated one kernel tap at a time: each tap is a channel-mixing
    matmul plus a strided slice add, so nothing larger than dy itself is
    ever materialized (a windowed full-correlation view would copy F*kh*kw
    values per input pixel).
    """
    dy = np.asarray(dy, dtype=np.float64)
    filters = np.asarray(filters, dtype=np.float64)
    n, f, ho, wo = dy.shape
    kh, kw = filters.shape[2:]
    ph, pw = pad
    sh, sw = stride
    h, w = in_hw
    c = filters.shape[1]
    dyt = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(n * ho * wo, f)
    # tap-major filters and a channels-last accumulator keep every matmul
    # operand and slice add contiguous; one layout conversion at the end
    taps = np.ascontiguousarray(filters.transpose(2, 3, 0, 1))
    dxp = np.zeros((n, h + 2 * ph, w + 2 * pw, c))
    for u in range(kh):
        for v in range(kw):
            contrib = (dyt @ taps[u, v]).reshape(n, ho, wo, c)
            dxp[:, u:u + (ho - 1) * sh + 1:sh,
                v:v + (wo - 1) * sw + 1:sw, :] += contrib
    dx = dxp[:, ph:ph + h, pw:pw + w, :]
    return np.ascontiguousarray(dx.transpose(0, 3, 1, 2))


# ---------------------------------------------------------------------------
# Pooling (ceil mode, truncated border windows, no padding)
# ---------------------------------------------------------------------------

def pool_output_extent(h: int, k: int, s: int) -> int:
    """Number of pooling windows along one axis."""
    n = -((h - k) // -s) + 1  # ceil((h-k)/s) + 1
    return min(n, (h - 1) // s + 1)  # every window must intersect the image


def _pool_geometry(in_hw, window, stride):
    h, w = in_hw
    kh, kw = window
    sh, sw = stride
    ho = pool_output_extent(h, kh, sh)
    wo = pool_output_extent(w, kw, sw)
    return ho, wo


def maxpool_forward(x, window, stride):
    """Max over each window; returns (out, argmax) with argmax as flat (H*W) indices.

    Ties are broken by the first maximal element in a row-major scan of the
    window, so the selected index is deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    kh, kw = window
    sh, sw = stride
    ho, wo = _pool_geometry((h, w), window, stride)
    hp = (ho - 1) * sh + kh
    wp = (wo - 1) * sw + kw
    xp = np.full((n, c, hp, wp), -np.inf)
    xp[:, :, :h, :w] = x
    win = _window_view(xp, window, stride, (ho, wo))
    flat = win.reshape(n, c, ho, wo, kh * kw)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    rows = idx // kw + np.arange(ho)[None, None, :, None] * sh
    cols = idx % kw + np.arange(wo)[None, None, None, :] * sw
    return np.ascontiguousarray(out), rows * w + cols


def maxpool_scatter(dy, argmax, in_hw) -> np.ndarray:
    """VJP of maxpool: route each output cotangent back to its argmax position."""
    dy = np.asarray(dy, dtype=np.float64)
    n, c = dy.shape[:2]
    h, w = in_hw
    dx = np.zeros((n, c, h * w))
    np.add.at(
        dx,
        (np.arange(n)[:, None, None, None], np.arange(c)[None, :, None, None], argmax),
        dy,
    )
    return dx.reshape(n, c, h, w)


def maxpool_gather(v, argmax, in_hw) -> np.ndarray:
    """JVP of maxpool: pick the cached argmax positions regardless of value."""
    v = np.asarray(v, dtype=np.float64)
    n, c = v.shape[:2]
    flat = v.reshape(n, c, in_hw[0] * in_hw[1])
    return flat[
        np.arange(n)[:, None, None, None], np.arange(c)[None, :, None, None], argmax
    ]


def _pool_counts(in_hw, window, stride, out_hw):
    """Per-window element counts, accounting for truncated border windows."""
    h, w = in_hw
    kh, kw = window
    sh, sw = stride
    ho, wo = out_hw
    rows = np.minimum(np.arange(ho) * sh + kh, h) - np.arange(ho) * sh
    cols = np.minimum(np.arange(wo) * sw + kw, w) - np.arange(wo) * sw
    return rows[:, None] * cols[None, :]


def meanpool_forward(x, window, stride) -> np.ndarray:
    """Mean over each (truncated) window."""
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    kh, kw = window
    sh, sw = stride
    ho, wo = _pool_geometry((h, w), window, stride)
    hp = (ho - 1) * sh + kh
    wp = (wo - 1) * sw + kw
    xp = np.zeros((n, c, hp, wp))
    xp[:, :, :h, :w] = x
    win = _window_view(xp, window, stride, (ho, wo))
    return win.sum(axis=(4, 5)) / _pool_counts((h, w), window, stride, (ho, wo))


def meanpool_backward(dy, window, stride, in_hw) -> np.ndarray:
    """VJP of meanpool: spread each cotangent uniformly over its actual window."""
    dy = np.asarray(dy, dtype=np.float64)
    n, c, ho, wo = dy.shape
    h, w = in_hw
    kh, kw = window
    sh, sw = stride
    dx = np.zeros((n, c, h, w))
    scaled = dy / _pool_counts((h, w), window, stride, (ho, wo))
    for i in range(kh):
        nv = min(ho, -((h - i) // -sh))  # windows whose row i stays inside
        if nv <= 0:
            continue
        for j in range(kw):
            mv = min(wo, -((w - j) // -sw))
            if mv <= 0:
                continue
            dx[:, :, i:i + (nv - 1) * sh + 1:sh, j:j + (mv - 1) * sw + 1:sw] += scaled[:, :, :nv, :mv]
    return dx
