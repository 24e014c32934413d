"""Context matching and multi-scale temporal attention transfer.

Each aligned reference gets one scalar similarity to the target: the cosine
between per-pixel L2-normalised feature vectors, averaged over the pixels
both frames can see, at the coarsest pyramid level.  Before matching, both
feature maps are centred per channel over that shared region; the raw
encoder channels are all nonnegative, which would push every cosine close
to 1 and leave the softmax nearly uniform.  A per-pixel masked
softmax over the references that can donate at that pixel turns the scalars
into attention weights.  The scalars are shared across pyramid levels; only
the visibility maps are resized per level.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import DTYPE, NoUsableReference, as_frame, as_mask, binarize
from .features import DEFAULT_LEVELS, encode
from .pyramid import downsample_mask, push_pull_fill

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.02
DEFAULT_VISIBLE_THRESHOLD = 1e-3


def visibility(target_mask, aligned):
    """Return ``(v_match, v_donate)`` for one aligned reference.

    ``v_match`` marks pixels visible in both frames (used for similarity);
    ``v_donate`` marks pixels where the reference has valid non-hole content
    (used for transfer).
    """
    target_mask = as_mask(target_mask)
    v_donate = (1 - binarize(aligned.mask)) * aligned.validity
    v_match = (1 - binarize(target_mask)) * v_donate
    return v_match.astype(DTYPE), v_donate.astype(DTYPE)


def _resize_visibility(v, level):
    if level == 0:
        return (v > 0.5).astype(DTYPE)
    # a coarse pixel is visible only if its whole block is
    return 1 - downsample_mask(1 - (v > 0.5).astype(DTYPE), 2 ** level)


def _match_region(v_match, level):
    """Coarse-level match region, shrunk so no 3x3 feature filter sees hole or out-of-frame pixels."""
    vm = _resize_visibility(v_match, level)
    inner = ndimage.binary_erosion(vm > 0.5, structure=np.ones((3, 3), bool), border_value=1)
    return inner.astype(DTYPE) if inner.any() else vm


def centre_features(feat_t, feat_ref, v_match):
    """Subtract each channel's mean over ``v_match`` from both maps."""
    sel = np.asarray(v_match) > 0.5
    a = np.asarray(feat_t, dtype=np.float64)
    b = np.asarray(feat_ref, dtype=np.float64)
    if not sel.any():
        return a, b
    return a - a[sel].mean(axis=0), b - b[sel].mean(axis=0)


def similarity(feat_t, feat_ref, v_match):
    """Visibility-weighted mean cosine similarity of two feature maps.

    ``v_match`` must already be at the feature maps' resolution.  Returns
    ``None`` when no pixel is visible in both.
    """
    v = np.asarray(v_match, dtype=np.float64)
    total = v.sum()
    if total <= 0:
        return None
    a = np.asarray(feat_t, dtype=np.float64)
    b = np.asarray(feat_ref, dtype=np.float64)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    cos = (a * b).sum(axis=-1) / np.maximum(na * nb, 1e-12)
    return float(np.clip((v * cos).sum() / total, -1.0, 1.0))


def masked_softmax(similarities, v_donate, tau=DEFAULT_TEMPERATURE):
    """Per-pixel softmax of ``similarities / tau`` over the visible references.

    ``similarities`` has shape ``(R,)``, ``v_donate`` shape ``(R, H, W)``.
    References with a ``nan`` similarity never receive weight.  Pixels with
    no visible reference get all-zero weights.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    sims = np.asarray(similarities, dtype=np.float64)
    vis = np.asarray(v_donate) > 0.5
    vis = vis & np.isfinite(sims)[:, None, None]
    if vis.shape[0] == 0:
        return np.zeros(vis.shape, DTYPE)
    logits = np.where(np.isfinite(sims), sims / tau, 0.0)[:, None, None]
    scores = np.where(vis, logits, -np.inf)
    peak = scores.max(axis=0)
    any_vis = np.isfinite(peak)
    e = np.where(vis, np.exp(scores - np.where(any_vis, peak, 0.0)), 0.0)
    den = e.sum(axis=0)
    out = np.where(any_vis, e / np.where(any_vis, den, 1.0), 0.0)
    return out.astype(DTYPE)


@dataclass
class TemporalAttention:
    """Shared temporal attention for a set of aligned references.

    ``weights`` and ``visibility`` are ``(R, H, W)`` at the processing
    resolution; ``similarities`` holds one scalar per reference (``nan`` when
    the reference shares no visible pixel with the target).
    """

    similarities: np.ndarray
    weights: np.ndarray
    visibility: np.ndarray
    temperature: float
    visible_threshold: float = DEFAULT_VISIBLE_THRESHOLD
    source_indices: list = field(default_factory=list)
    branches: list = field(default_factory=list)

    @property
    def coverage(self):
        """Sum of attention weights per pixel, clamped to [0, 1]."""
        if self.weights.shape[0] == 0:
            return np.zeros(self.weights.shape[1:], DTYPE)
        return np.clip(self.weights.sum(axis=0), 0, 1).astype(DTYPE)

    @property
    def c_visible(self):
        """Binary map of pixels that receive any temporal donation."""
        return (self.coverage > self.visible_threshold).astype(DTYPE)

    def weights_at(self, level):
        """Attention weights at pyramid ``level`` (shared similarities, resized visibility)."""
        if level == 0:
            return self.weights
        vis = np.stack([_resize_visibility(v, level) for v in self.visibility]) if len(self.visibility) else (
            np.zeros((0,) + tuple(d // 2 ** level for d in self.weights.shape[1:]), DTYPE)
        )
        return masked_softmax(self.similarities, vis, self.temperature)

    def top1(self):
        """Index into the reference list of the strongest donor per pixel, -1 where none."""
        if self.weights.shape[0] == 0:
            return np.full(self.weights.shape[1:], -1, np.int32)
        best = self.weights.argmax(axis=0).astype(np.int32)
        return np.where(self.c_visible > 0, best, -1)


@dataclass
class TemporalResult:
    y_t1: np.ndarray
    leftover: np.ndarray
    attention: TemporalAttention
    hole: np.ndarray
    transferred: np.ndarray


def attention_transfer(ref_pyramids, attention, level=0):
    """Attention-weighted sum of reference feature maps at ``level``."""
    weights = attention.weights_at(level)
    maps = [p[level] for p in ref_pyramids]
    out = np.zeros(maps[0].shape, np.float64) if maps else None
    for w, fm in zip(weights, maps):
        out += w[..., None].astype(np.float64) * fm
    return out.astype(DTYPE)


def pixel_transfer(aligned, weights):
    """Attention-weighted sum of aligned reference frames."""
    out = np.zeros(aligned[0].frame.shape, np.float64)
    for w, a in zip(weights, aligned):
        out += w[..., None].astype(np.float64) * a.frame
    return out.astype(DTYPE)


def compute_attention(
    target,
    target_mask,
    aligned,
    encoder=encode,
    levels=DEFAULT_LEVELS,
    tau=DEFAULT_TEMPERATURE,
    visible_threshold=DEFAULT_VISIBLE_THRESHOLD,
    mapper=map,
):
    """Similarities and per-pixel attention weights for a list of aligned references."""
    feat_t = encoder(target, target_mask, levels)
    lvl = feat_t.level_count - 1

    def one(a):
        v_match, v_donate = visibility(target_mask, a)
        feat_r = encoder(a.frame, 1 - v_donate, levels)
        vm = _match_region(v_match, lvl)
        sim = similarity(*centre_features(feat_t[lvl], feat_r[lvl], vm), vm)
        if sim is None:
            log.debug("reference %d shares no visible pixels; excluded", a.source_index)
            sim = np.nan
        return sim, v_donate

    pairs = list(mapper(one, aligned))
    sims = np.array([p[0] for p in pairs], dtype=np.float64)
    donors = [p[1] for p in pairs]
    vis = np.stack(donors) if donors else np.zeros((0,) + target_mask.shape, DTYPE)
    vis = vis * np.isfinite(sims)[:, None, None]
    return TemporalAttention(
        similarities=sims,
        weights=masked_softmax(sims, vis, tau),
        visibility=vis.astype(DTYPE),
        temperature=tau,
        visible_threshold=visible_threshold,
        source_indices=[a.source_index for a in aligned],
        branches=[a.branch for a in aligned],
    )


def temporal_inpaint(
    target,
    target_mask,
    aligned,
    encoder=encode,
    levels=DEFAULT_LEVELS,
    tau=DEFAULT_TEMPERATURE,
    visible_threshold=DEFAULT_VISIBLE_THRESHOLD,
    mapper=map,
):
    """Fill the target hole from aligned references at the processing resolution.

    Hole pixels with temporal donors receive the attention-weighted reference
    colours; the rest (the leftover) get a push-pull diffusion fill.  Pixels
    outside the hole are returned untouched.
    """
    if not aligned:
        raise NoUsableReference("temporal aggregation needs at least one aligned reference")
    target = as_frame(target, "target")
    target_mask = as_mask(target_mask, target.shape, "target_mask")
    att = compute_attention(target, target_mask, aligned, encoder, levels, tau, visible_threshold, mapper)

    hole = binarize(target_mask)
    c_vis = att.c_visible
    leftover = hole * (1 - c_vis)
    transferred = pixel_transfer(aligned, att.weights)
    fill = (hole * c_vis)[..., None] > 0
    y = np.where(fill, transferred, target)
    if leftover.any():
        y = push_pull_fill(y, leftover)
    return TemporalResult(y_t1=y.astype(DTYPE), leftover=leftover.astype(DTYPE), attention=att, hole=hole, transferred=transferred)
