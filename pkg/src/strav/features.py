"""Deterministic multi-scale feature encoder.

Eight channels per pixel: luma, R, G, B, |d/dx luma|, |d/dy luma|, 3x3 box
blurred luma and the 3x3 local standard deviation of luma.  Level ``l`` is
computed on the frame area-downsampled by ``2**l``; features at hole pixels
are zeroed.  Any callable ``encoder(frame, mask, levels) -> FeaturePyramid``
can replace :func:`encode`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import DTYPE, InvalidInputError, as_frame, as_mask, luma
from .pyramid import downsample, downsample_mask

N_CHANNELS = 8
DEFAULT_LEVELS = 3


@dataclass(frozen=True)
class FeaturePyramid:
    levels: tuple

    @property
    def level_count(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]

    @property
    def coarsest(self):
        return self.levels[-1]


def _level_features(f):
    y = luma(f)
    # central differences, one-sided at the border
    gx = np.zeros_like(y)
    gy = np.zeros_like(y)
    if y.shape[1] > 1:
        gx[:, 1:-1] = (y[:, 2:] - y[:, :-2]) * DTYPE(0.5)
        gx[:, 0] = y[:, 1] - y[:, 0]
        gx[:, -1] = y[:, -1] - y[:, -2]
    if y.shape[0] > 1:
        gy[1:-1] = (y[2:] - y[:-2]) * DTYPE(0.5)
        gy[0] = y[1] - y[0]
        gy[-1] = y[-1] - y[-2]
    blur = ndimage.uniform_filter(y, size=3, mode="nearest")
    sq = ndimage.uniform_filter(y * y, size=3, mode="nearest")
    std = np.sqrt(np.maximum(sq - blur * blur, 0))
    return np.stack([y, f[..., 0], f[..., 1], f[..., 2], np.abs(gx), np.abs(gy), blur, std], axis=-1).astype(DTYPE)


def encode(f, m=None, levels=DEFAULT_LEVELS):
    """Feature pyramid of ``f`` with holes of ``m`` zeroed at every level."""
    f = as_frame(f)
    if levels < 1:
        raise InvalidInputError("levels must be >= 1")
    k = 2 ** (levels - 1)
    if f.shape[0] % k or f.shape[1] % k:
        raise InvalidInputError(f"dims {f.shape[:2]} not divisible by {k}")
    m = np.zeros(f.shape[:2], DTYPE) if m is None else as_mask(m, f.shape)

    out = []
    for lvl in range(levels):
        s = 2 ** lvl
        fl = downsample(f, s)
        ml = downsample_mask(m, s)
        feats = _level_features(fl) * (1 - ml)[..., None]
        out.append(feats.astype(DTYPE))
    return FeaturePyramid(tuple(out))
