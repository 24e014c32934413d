"""Area-average downsampling, bilinear upsampling and residual extraction.

The decomposition is a single split: ``low = downsample(f, s)`` and
``residual = f - upsample(low, s)``.  Upsampling uses half-pixel centred
sampling, so output pixel ``i`` reads source coordinate ``(i + 0.5) / s - 0.5``
with edge clamping.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DTYPE, InvalidInputError

DEFAULT_SCALE = 4


def _check_scale(s):
    if int(s) != s or s < 1:
        raise InvalidInputError(f"scale must be a positive integer, got {s}")
    return int(s)


def downsample(f, s):
    """Mean of each ``s x s`` block.  Works on frames and on scalar maps."""
    s = _check_scale(s)
    a = np.asarray(f, dtype=DTYPE)
    h, w = a.shape[:2]
    if h % s or w % s:
        raise InvalidInputError(f"dims {h}x{w} not divisible by scale {s}")
    if s == 1:
        return a.copy()
    blocks = a.reshape(h // s, s, w // s, s, *a.shape[2:])
    return blocks.mean(axis=(1, 3), dtype=np.float64).astype(DTYPE)


def downsample_mask(m, s):
    """Block downsample of a hole mask: any hole pixel makes the block a hole."""
    s = _check_scale(s)
    m = np.asarray(m, dtype=DTYPE)
    h, w = m.shape
    if h % s or w % s:
        raise InvalidInputError(f"dims {h}x{w} not divisible by scale {s}")
    if s == 1:
        return (m > 0).astype(DTYPE)
    return (m.reshape(h // s, s, w // s, s).max(axis=(1, 3)) > 0).astype(DTYPE)


def _axis_weights(n_in, n_out):
    # half-pixel centres, clamped at the borders
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = (src - i0).astype(DTYPE)
    return i0, i1, frac


def resize_bilinear(f, out_h, out_w):
    """Separable bilinear resize with half-pixel centres and edge clamping."""
    a = np.asarray(f, dtype=DTYPE)
    h, w = a.shape[:2]
    if (h, w) == (out_h, out_w):
        return a.copy()
    r0, r1, rf = _axis_weights(h, out_h)
    c0, c1, cf = _axis_weights(w, out_w)
    extra = (1,) * (a.ndim - 2)
    rf = rf.reshape((-1, 1) + extra)
    rows = a[r0] * (1 - rf) + a[r1] * rf
    cf = cf.reshape((1, -1) + extra)
    return rows[:, c0] * (1 - cf) + rows[:, c1] * cf


def upsample(f, s):
    """Bilinear upsample by an integer factor ``s``."""
    s = _check_scale(s)
    a = np.asarray(f, dtype=DTYPE)
    if s == 1:
        return a.copy()
    return resize_bilinear(a, a.shape[0] * s, a.shape[1] * s)


def upsample_nearest(m, s):
    """Replicate every pixel into an ``s x s`` block."""
    s = _check_scale(s)
    a = np.asarray(m)
    if s == 1:
        return a.copy()
    return np.repeat(np.repeat(a, s, axis=0), s, axis=1)


@dataclass(frozen=True)
class ResidualDecomposition:
    low: np.ndarray
    residual: np.ndarray
    scale: int

    def reconstruct(self):
        return upsample(self.low, self.scale) + self.residual


def decompose(f, s=DEFAULT_SCALE):
    """Split ``f`` into its downsampled version and the high-frequency residual."""
    low = downsample(f, s)
    residual = np.asarray(f, dtype=DTYPE) - upsample(low, s)
    return ResidualDecomposition(low=low, residual=residual, scale=_check_scale(s))


def push_pull_fill(f, mask):
    """Fill ``mask == 1`` pixels by coarse-to-fine averaging of known pixels.

    Push: known values are averaged into 2x2 blocks level by level until
    everything is known or a single pixel remains.  Pull: going back up,
    unknown pixels take the bilinear upsample of the filled coarser level.
    Pixels outside the mask are returned unchanged.  A fully-unknown image
    comes back as zeros.
    """
    a = np.asarray(f, dtype=DTYPE)
    known = np.asarray(mask, dtype=DTYPE) <= 0
    if known.all():
        return a.copy()
    if not known.any():
        return np.zeros_like(a)

    extra = (1,) * (a.ndim - 2)
    pyramid = []
    vals, k = a * known.reshape(known.shape + extra), known.astype(DTYPE)
    while True:
        pyramid.append((vals, k))
        h, w = k.shape
        if (k > 0).all() or (h == 1 and w == 1):
            break
        ph, pw = h % 2, w % 2
        if ph or pw:
            pad = ((0, ph), (0, pw))
            vals = np.pad(vals, pad + ((0, 0),) * len(extra))
            k = np.pad(k, pad)
        hh, ww = k.shape[0] // 2, k.shape[1] // 2
        wsum = k.reshape(hh, 2, ww, 2).sum(axis=(1, 3))
        vsum = (vals * k.reshape(k.shape + extra)).reshape(hh, 2, ww, 2, *a.shape[2:]).sum(axis=(1, 3))
        safe = np.where(wsum > 0, wsum, 1).reshape(wsum.shape + extra)
        vals = np.where(wsum.reshape(wsum.shape + extra) > 0, vsum / safe, 0).astype(DTYPE)
        k = (wsum > 0).astype(DTYPE)

    filled = pyramid[-1][0]
    for vals, k in reversed(pyramid[:-1]):
        h, w = k.shape
        ch, cw = filled.shape[:2]
        up = resize_bilinear(filled, ch * 2, cw * 2)[:h, :w]
        kk = k.reshape(k.shape + extra)
        filled = np.where(kk > 0, vals, up).astype(DTYPE)
    return np.where(known.reshape(known.shape + extra), a, filled).astype(DTYPE)
