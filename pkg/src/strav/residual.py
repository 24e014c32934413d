"""Spatial-temporal residual aggregation at full resolution.

The low-resolution inpainting is upsampled into the hole, then detail is
added back in two disjoint zones:

* temporal zone (hole pixels with temporal donors): the attention-weighted
  sum of the references' residual images, warped by the low-resolution
  alignments rescaled to full resolution;
* leftover zone (the rest of the hole): score-weighted residual patches from
  the frame's own context, on the spatial attention grid scaled by ``s``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .alignment import AffineTransform, FlowField, sample_bilinear
from .core import DTYPE, InvalidInputError, as_frame, as_mask, binarize, from_uint8
from .pyramid import decompose, downsample_mask, upsample, upsample_nearest
from .spatial import SpatialAttention, aggregate_patches


@dataclass
class HighResAssembly:
    upsampled_base: np.ndarray
    temporal_zone: np.ndarray
    leftover_zone: np.ndarray
    temporal_result: np.ndarray
    result: np.ndarray


class ResidualSource:
    """Residual of one reference frame, computed lazily around the pixels asked for.

    ``load`` returns the full-resolution frame (so only one full-resolution
    frame per reference is alive at a time).  When the reference has a hole
    mask, residual pixels whose low-pass support touches the hole are
    reported invalid.
    """

    def __init__(self, load: Callable[[], np.ndarray], scale: int, mask=None, release: Callable | None = None):
        self._load = load
        self._release = release
        self.scale = scale
        self.mask = mask  # array, or a callable returning one

    @classmethod
    def from_frame(cls, frame, scale, mask=None):
        return cls(lambda: frame, scale, mask)

    def sample(self, xs, ys):
        if len(xs) == 0:
            return np.zeros((0, 3), DTYPE), np.zeros(0, bool)
        frame = self._load()
        try:
            return self._sample(frame, xs, ys)
        finally:
            del frame
            if self._release is not None:
                self._release()

    def _sample(self, frame, xs, ys):
        s = self.scale
        h, w = frame.shape[:2]
        # decompose only the block-aligned bounding box (plus a margin) of the lookups
        margin = 2 * s
        x0 = max(0, (int(np.floor(np.clip(xs, 0, w - 1).min())) - margin) // s * s)
        y0 = max(0, (int(np.floor(np.clip(ys, 0, h - 1).min())) - margin) // s * s)
        x1 = min(w, -(-(int(np.ceil(np.clip(xs, 0, w - 1).max())) + 1 + margin) // s) * s)
        y1 = min(h, -(-(int(np.ceil(np.clip(ys, 0, h - 1).max())) + 1 + margin) // s) * s)
        residual = decompose(_crop(frame, y0, y1, x0, x1), s).residual
        vals, _ = sample_bilinear(residual, xs - x0, ys - y0)
        valid = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
        mask = self.mask() if callable(self.mask) else self.mask
        if mask is not None:
            mcrop = _crop(mask, y0, y1, x0, x1)
            if mcrop.any():
                gate = residual_validity(mcrop, s)
                gv, _ = sample_bilinear(gate, xs - x0, ys - y0)
                valid &= gv >= 1 - 1e-6
        return vals, valid


class LazyFrame:
    """Read-only frame or mask that is only converted to float where it is cropped.

    ``data`` is the unpadded ``(H0, W0[, C])`` array (8-bit or float, possibly
    memory-mapped); ``shape`` the padded size.  Padding replicates the edge
    for frames and is zero for masks, as in :func:`core.pad_to_multiple`.
    """

    def __init__(self, data, shape, is_mask=False):
        self.data = data
        self.is_mask = is_mask
        self.shape = tuple(shape[:2]) + tuple(data.shape[2:])

    def crop(self, y0, y1, x0, x1):
        h0, w0 = self.data.shape[:2]
        if y1 <= h0 and x1 <= w0:
            block = np.asarray(self.data[y0:y1, x0:x1])
        elif self.is_mask:
            block = np.zeros((y1 - y0, x1 - x0) + self.data.shape[2:], self.data.dtype)
            block[: max(0, min(y1, h0) - y0), : max(0, min(x1, w0) - x0)] = self.data[y0:min(y1, h0), x0:min(x1, w0)]
        else:
            rows = np.minimum(np.arange(y0, y1), h0 - 1)
            cols = np.minimum(np.arange(x0, x1), w0 - 1)
            block = np.asarray(self.data[rows][:, cols])
        if block.dtype == np.uint8:
            return from_uint8(block)
        return block.astype(DTYPE)


def _crop(a, y0, y1, x0, x1):
    if hasattr(a, "crop"):
        return a.crop(y0, y1, x0, x1)
    return np.asarray(a[y0:y1, x0:x1], dtype=DTYPE)


def residual_validity(mask, s):
    """Pixels whose residual is unaffected by hole content in the low-pass image."""
    low = downsample_mask(binarize(mask), s)
    low = ndimage.binary_dilation(low > 0, structure=np.ones((3, 3), bool))
    return (1 - upsample_nearest(low.astype(DTYPE), s)).astype(DTYPE)


def _fixed_residual(residual):
    residual = np.asarray(residual, dtype=DTYPE)

    class _Fixed:
        def sample(self, xs, ys):
            return sample_bilinear(residual, xs, ys)

    return _Fixed()


def _full_res_coords(transform, xs, ys, s):
    if isinstance(transform, AffineTransform):
        return transform.rescaled(s).map(xs, ys)
    if isinstance(transform, FlowField):
        h, w = transform.shape
        lx = np.clip((xs + 0.5) / s - 0.5, 0, w - 1)
        ly = np.clip((ys + 0.5) / s - 0.5, 0, h - 1)
        u, _ = sample_bilinear(transform.u, lx, ly)
        v, _ = sample_bilinear(transform.v, lx, ly)
        return xs + u.astype(np.float64) * s, ys + v.astype(np.float64) * s
    if transform is None:
        return xs, ys
    raise InvalidInputError(f"unsupported alignment type {type(transform).__name__}")


def temporal_residual_aggregate(ref_residuals: Sequence, alignments: Sequence, weights, base, temporal_zone, s):
    """Add attention-weighted, aligned reference residuals inside ``temporal_zone``.

    ``ref_residuals`` holds, per aligned reference, either a full-resolution
    residual array or an object with ``sample(xs, ys) -> (values, valid)``
    (see :class:`ResidualSource`).  ``weights`` are the ``(R, h, w)``
    low-resolution attention weights, applied by nearest-neighbour
    upsampling.  Where some donors cannot supply a valid residual the
    remaining donors' weights are rescaled to the same total.
    """
    base = np.asarray(base, dtype=DTYPE)
    zone = np.asarray(temporal_zone) > 0.5
    weights = np.asarray(weights)
    if len(ref_residuals) != len(alignments) or len(alignments) != len(weights):
        raise InvalidInputError("residuals, alignments and weights must have one entry per reference")
    out = base.copy()
    if not zone.any() or len(weights) == 0:
        return out
    ys, xs = np.nonzero(zone)
    xf = xs.astype(np.float64)
    yf = ys.astype(np.float64)
    acc = np.zeros((len(xs), base.shape[2]))
    w_total = np.zeros(len(xs))
    w_used = np.zeros(len(xs))
    for src, tr, wmap in zip(ref_residuals, alignments, weights):
        wr = wmap[ys // s, xs // s].astype(np.float64)
        if not wr.any():
            continue
        src = src if hasattr(src, "sample") else _fixed_residual(src)
        sx, sy = _full_res_coords(tr, xf, yf, s)
        vals, valid = src.sample(sx, sy)
        g = wr * valid
        acc += g[:, None] * vals
        w_total += wr
        w_used += g
    scale = np.ones_like(w_total)
    short = (w_used < w_total) & (w_used > 0)
    scale[short] = w_total[short] / w_used[short]
    out[ys, xs] = (base[ys, xs] + acc * scale[:, None]).astype(DTYPE)
    return out


def spatial_residual_aggregate(target_residual, attention: SpatialAttention, base, leftover_zone, s):
    """Add score-weighted context residual patches inside ``leftover_zone``."""
    base = np.asarray(base, dtype=DTYPE)
    zone = np.asarray(leftover_zone) > 0.5
    if not zone.any() or attention is None or len(attention.hole_patches) == 0:
        return base.copy()
    residual = np.asarray(target_residual, dtype=DTYPE)
    agg = aggregate_patches(residual, zone, attention, patch=attention.patch_size * s, feather=0)
    return np.where(zone[..., None], base + agg, base).astype(DTYPE)


def assemble(
    x_raw,
    mask_raw,
    y_t2,
    c_visible,
    s,
    temporal_weights=None,
    alignments=(),
    ref_residuals=(),
    spatial: SpatialAttention | None = None,
    use_temporal=True,
    use_spatial=True,
):
    """Full-resolution frame from the low-resolution result plus residual detail.

    Outside the hole the raw pixels are returned bit-exactly.
    """
    x_raw = as_frame(x_raw, "x_raw")
    hole = binarize(as_mask(mask_raw, x_raw.shape, "mask_raw")) > 0
    y_t2 = as_frame(y_t2, "y_t2")
    if y_t2.shape[0] * s != x_raw.shape[0] or y_t2.shape[1] * s != x_raw.shape[1]:
        raise InvalidInputError(f"low-res shape {y_t2.shape[:2]} x{s} does not match {x_raw.shape[:2]}")
    if not hole.any():
        return HighResAssembly(x_raw.copy(), np.zeros(hole.shape, DTYPE), np.zeros(hole.shape, DTYPE), x_raw.copy(), x_raw.copy())

    base = np.where(hole[..., None], upsample(y_t2, s), x_raw).astype(DTYPE)
    t_zone = hole & (upsample_nearest(np.asarray(c_visible), s) > 0.5)
    l_zone = hole & ~t_zone

    y_temp = base
    if use_temporal and temporal_weights is not None and len(alignments):
        y_temp = temporal_residual_aggregate(ref_residuals, alignments, temporal_weights, base, t_zone, s)
    result = y_temp
    if use_spatial and spatial is not None and l_zone.any():
        own = decompose(y_temp, s).residual
        result = spatial_residual_aggregate(own, spatial, y_temp, l_zone, s)

    result = np.where(hole[..., None], np.clip(result, 0, 1), x_raw).astype(DTYPE)
    y_temp = np.where(hole[..., None], np.clip(y_temp, 0, 1), x_raw).astype(DTYPE)
    return HighResAssembly(base, t_zone.astype(DTYPE), l_zone.astype(DTYPE), y_temp, result)
