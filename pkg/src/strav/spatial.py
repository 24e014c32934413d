"""Patch-based spatial attention for refining the leftover region.

The frame is cut into a non-overlapping grid of ``patch x patch`` cells.
Cells touching the leftover mask are *hole patches*, the others are
*context patches*.  A hole patch is described by the pooled, standardised
encoder features of the known cells around it; a context patch by the cells
at the same offsets around it.  Cosine similarity of those descriptors,
softmaxed over context patches with temperature ``tau``, gives the score
matrix ``S[j, i]`` (hole ``j``, context ``i``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import DTYPE, InvalidInputError, SpatialContextUnavailable, as_frame, as_mask, binarize
from .features import encode
from .pyramid import decompose

log = logging.getLogger(__name__)

DEFAULT_PATCH = 8
DEFAULT_SPATIAL_TEMPERATURE = 0.5
DEFAULT_DETAIL_SCALE = 4


@dataclass
class SpatialAttention:
    scores: np.ndarray          # (n_hole, n_context), rows sum to 1
    hole_patches: np.ndarray    # (n_hole, 2) grid (row, col)
    context_patches: np.ndarray  # (n_context, 2)
    patch_size: int
    grid_shape: tuple

    def top1(self):
        """Grid coordinates of the best context patch for each hole patch."""
        if len(self.hole_patches) == 0:
            return np.zeros((0, 2), np.intp)
        return self.context_patches[self.scores.argmax(axis=1)]

    def correspondence_map(self):
        """Per-cell map of the top-1 context cell as a flat index (-1 for context cells)."""
        gh, gw = self.grid_shape
        out = np.full((gh, gw), -1, np.int64)
        for (r, c), (tr, tc) in zip(self.hole_patches, self.top1()):
            out[r, c] = tr * gw + tc
        return out


def blend_for_refine(y_t1, x_t, hole):
    """Inpainted content inside the hole, original pixels outside it."""
    y_t1 = as_frame(y_t1, "y_t1")
    x_t = as_frame(x_t, "x_t")
    hole = binarize(as_mask(hole, x_t.shape, "hole"))
    return np.where(hole[..., None] > 0, y_t1, x_t).astype(DTYPE)


def _cell_grid(m, patch):
    h, w = m.shape
    return m.reshape(h // patch, patch, w // patch, patch)


def _pooled_cells(feats, patch):
    h, w, c = feats.shape
    return feats.reshape(h // patch, patch, w // patch, patch, c).mean(axis=(1, 3), dtype=np.float64)


def spatial_attention(f, leftover, patch=DEFAULT_PATCH, tau=DEFAULT_SPATIAL_TEMPERATURE, encoder=encode):
    """Score every hole patch against every context patch."""
    f = as_frame(f)
    leftover = binarize(as_mask(leftover, f.shape, "leftover"))
    h, w = leftover.shape
    if h % patch or w % patch:
        raise InvalidInputError(f"dims {h}x{w} not divisible by patch size {patch}")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    gh, gw = h // patch, w // patch
    touched = _cell_grid(leftover, patch).max(axis=(1, 3)) > 0
    known = ~touched
    hole_idx = np.argwhere(touched)
    ctx_idx = np.argwhere(known)
    if len(ctx_idx) == 0:
        raise SpatialContextUnavailable("every patch intersects the leftover region")
    if len(hole_idx) == 0:
        return SpatialAttention(np.zeros((0, len(ctx_idx)), DTYPE), hole_idx, ctx_idx, patch, (gh, gw))

    cells = _pooled_cells(encoder(f, None, 1)[0], patch)
    mu = cells[known].mean(axis=0)
    sd = cells[known].std(axis=0)
    cells = (cells - mu) / np.maximum(sd, 1e-6)

    sims = np.full((len(hole_idx), len(ctx_idx)), np.nan)
    pending = np.arange(len(hole_idx))
    radius = 1
    while len(pending):
        sims_r, has_ring = _ring_cosine(cells, known, hole_idx[pending], ctx_idx, radius)
        done = has_ring | (radius >= max(gh, gw))
        sims[pending[done]] = sims_r[done]
        pending = pending[~done]
        radius += 1

    logits = sims / tau
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    scores = e / e.sum(axis=1, keepdims=True)
    return SpatialAttention(scores.astype(DTYPE), hole_idx, ctx_idx, patch, (gh, gw))


def _ring_cosine(cells, known, hole_idx, ctx_idx, radius):
    gh, gw, _ = cells.shape
    pad = radius
    cp = np.pad(cells, ((pad, pad), (pad, pad), (0, 0)))
    kp = np.pad(known.astype(np.float64), pad)
    dot = np.zeros((len(hole_idx), len(ctx_idx)))
    nj = np.zeros_like(dot)
    ni = np.zeros_like(dot)
    ring_known = np.zeros(len(hole_idx), bool)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            jy, jx = hole_idx[:, 0] + dy + pad, hole_idx[:, 1] + dx + pad
            iy, ix = ctx_idx[:, 0] + dy + pad, ctx_idx[:, 1] + dx + pad
            kj = kp[jy, jx]
            ei = kp[iy, ix]
            aj = cp[jy, jx] * kj[:, None]
            ai = cp[iy, ix] * ei[:, None]
            ring_known |= kj > 0
            dot += aj @ ai.T
            nj += np.outer((aj * aj).sum(axis=1), ei)
            ni += np.outer(kj, (ai * ai).sum(axis=1))
    denom = np.sqrt(nj * ni)
    cos = np.where(denom > 1e-12, dot / np.where(denom > 1e-12, denom, 1.0), -1.0)
    return cos, ring_known


def aggregate_patches(src, region, attention, patch=None, feather=0):
    """Write score-weighted context patches of ``src`` into ``region``.

    ``patch`` overrides the attention's patch size (for applying low-res
    scores on a finer grid).  With ``feather > 0`` each hole patch is
    extended by ``feather`` pixels with a linear ramp, and overlapping
    extended patches are blended, softening seams between neighbouring hole
    patches.  Pixels outside ``region`` are returned unchanged.
    """
    src = np.asarray(src, dtype=DTYPE)
    region = np.asarray(region) > 0.5
    p = attention.patch_size if patch is None else int(patch)
    gh, gw = attention.grid_shape
    if src.shape[:2] != (gh * p, gw * p):
        raise InvalidInputError(f"source shape {src.shape[:2]} does not match a {gh}x{gw} grid of {p}px patches")
    if len(attention.hole_patches) == 0 or not region.any():
        return src.copy()

    e = int(feather)
    ext = p + 2 * e
    padded = np.pad(src, ((e, e), (e, e), (0, 0)), mode="edge") if e else src
    ctx = np.stack([padded[r * p:r * p + ext, c * p:c * p + ext] for r, c in attention.context_patches])
    blocks = np.einsum("ji,iabc->jabc", attention.scores.astype(np.float64), ctx)

    ramp = np.ones(ext)
    for d in range(1, e + 1):
        ramp[e - d] = ramp[ext - e + d - 1] = 1 - d / (e + 1)
    wt = np.outer(ramp, ramp)

    acc = np.zeros((gh * p + 2 * e, gw * p + 2 * e, src.shape[2]))
    wsum = np.zeros(acc.shape[:2])
    for (r, c), blk in zip(attention.hole_patches, blocks):
        acc[r * p:r * p + ext, c * p:c * p + ext] += wt[..., None] * blk
        wsum[r * p:r * p + ext, c * p:c * p + ext] += wt
    acc = acc[e:e + gh * p, e:e + gw * p]
    wsum = wsum[e:e + gh * p, e:e + gw * p]
    filled = acc / np.where(wsum > 0, wsum, 1.0)[..., None]
    write = region & (wsum > 0)
    return np.where(write[..., None], filled, src).astype(DTYPE)


def spatial_transfer(f, leftover, attention, feather=2, detail_scale=DEFAULT_DETAIL_SCALE):
    """Refine the leftover region of ``f`` with score-weighted context patches (``y_t2``).

    With ``detail_scale`` set, only the detail layer ``f - up(down(f))`` is
    transferred and added to the (smooth) diffusion fill already in the
    leftover; the fill keeps the local brightness and the context patches
    supply texture.  ``detail_scale=None`` copies whole patches.
    """
    f = as_frame(f)
    leftover = binarize(as_mask(leftover, f.shape, "leftover"))
    if detail_scale is None:
        return aggregate_patches(f, leftover, attention, feather=feather)
    detail = decompose(f, detail_scale).residual
    moved = aggregate_patches(detail, leftover, attention, feather=feather)
    out = np.where(leftover[..., None] > 0, f + moved, f)
    return np.clip(out, 0, 1).astype(DTYPE)
