"""Training-loss formulas, used here as an evaluation harness.

Normalisation convention: every masked L1 term is the sum of absolute
differences over its active region divided by the number of active
elements (mask weight times channels), so a constant error ``e`` confined to
the region scores exactly ``e``.  Per-frame terms are summed over frames and
divided by ``N``.  An empty region contributes 0.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .core import DTYPE, InvalidInputError, binarize, luma
from .features import encode

log = logging.getLogger(__name__)

LOSS_NAMES = ("align", "vis", "leftover", "nonhole", "percep", "style", "rec", "adv")


@dataclass(frozen=True)
class LossWeights:
    align: float = 5.0
    vis: float = 10.0
    leftover: float = 20.0
    nonhole: float = 6.0
    percep: float = 0.01
    style: float = 24.0
    rec: float = 1.2
    adv: float = 0.001

    def __post_init__(self):
        if any(v < 0 for v in asdict(self).values()):
            raise InvalidInputError("loss weights must be nonnegative")


@dataclass
class SequenceSample:
    """``N`` frames with masks, ground truth and inpainting outputs (all same size)."""

    frames: Sequence[np.ndarray]
    masks: Sequence[np.ndarray]
    ground_truths: Sequence[np.ndarray]
    outputs: Sequence[np.ndarray]

    def __post_init__(self):
        n = len(self.frames)
        if not (len(self.masks) == len(self.ground_truths) == len(self.outputs) == n) or n == 0:
            raise InvalidInputError("sample needs the same nonzero number of frames, masks, ground truths and outputs")
        shape = np.shape(self.frames[0])
        for arrs in (self.frames, self.ground_truths, self.outputs):
            if any(np.shape(a) != shape for a in arrs):
                raise InvalidInputError("inconsistent frame dimensions across the sample")
        if any(np.shape(m) != shape[:2] for m in self.masks):
            raise InvalidInputError("mask dimensions do not match the frames")

    @property
    def n(self):
        return len(self.frames)


def masked_l1(a, b, region):
    """Mean absolute difference over the elements selected by ``region`` (0 if empty)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    region = np.asarray(region, dtype=np.float64)
    channels = a.shape[2] if a.ndim == 3 else 1
    count = region.sum() * channels
    if count == 0:
        return 0.0
    diff = np.abs(a - b)
    if a.ndim == 3:
        diff = diff.sum(axis=2)
    return float((diff * region).sum() / count)


def l_align(sample, aligned_refs):
    """``aligned_refs[t]`` lists the references aligned to frame ``t``."""
    total = 0.0
    any_region = False
    for x, m, refs in zip(sample.frames, sample.masks, aligned_refs):
        vis_t = 1 - binarize(m)
        for a in refs:
            region = vis_t * (1 - binarize(a.mask))
            if region.any():
                any_region = True
            total += masked_l1(x, a.frame, region)
    if not any_region:
        log.warning("alignment loss: no jointly visible pixels in any pair")
    return total / sample.n


def l_hole_visible(sample, c_visible):
    return sum(
        masked_l1(y, gt, binarize(m) * np.asarray(c, DTYPE))
        for y, gt, m, c in zip(sample.outputs, sample.ground_truths, sample.masks, c_visible)
    ) / sample.n


def l_hole_leftover(sample, leftovers):
    return sum(
        masked_l1(y, gt, lo) for y, gt, lo in zip(sample.outputs, sample.ground_truths, leftovers)
    ) / sample.n


def l_non_hole(sample):
    return sum(
        masked_l1(y, gt, 1 - binarize(m)) for y, gt, m in zip(sample.outputs, sample.ground_truths, sample.masks)
    ) / sample.n


def y_comb(y, x, m):
    """Output inside the hole, input outside it."""
    m = np.asarray(m, dtype=DTYPE)[..., None]
    return (m * np.asarray(y, DTYPE) + (1 - m) * np.asarray(x, DTYPE)).astype(DTYPE)


def gram(feat):
    """Channel Gram matrix of an ``(H, W, C)`` feature map, divided by ``C*H*W``."""
    f = np.asarray(feat, dtype=np.float64)
    h, w, c = f.shape
    flat = f.reshape(h * w, c)
    return flat.T @ flat / (c * h * w)


def default_phi(frame):
    """Feature levels of the deterministic encoder (three levels, no holes)."""
    f = np.asarray(frame, DTYPE)
    levels = 3
    while levels > 1 and (f.shape[0] % 2 ** (levels - 1) or f.shape[1] % 2 ** (levels - 1)):
        levels -= 1
    return list(encode(f, None, levels).levels)


def _feature_loss(sample, phi, reduce):
    total = 0.0
    for y, x, m, gt in zip(sample.outputs, sample.frames, sample.masks, sample.ground_truths):
        fa = phi(y_comb(y, x, binarize(m)))
        fb = phi(gt)
        total += sum(reduce(a, b) for a, b in zip(fa, fb)) / len(fa)
    return total / sample.n


def l_perceptual(sample, phi: Callable = default_phi):
    return _feature_loss(sample, phi, lambda a, b: float(np.abs(np.asarray(a, np.float64) - b).mean()))


def l_style(sample, phi: Callable = default_phi):
    return _feature_loss(sample, phi, lambda a, b: float(np.abs(gram(a) - gram(b)).mean()))


def l_rec(x_tilde, x, leftovers):
    """Leftover-region and remaining-region L1 between generator output and input, per frame."""
    if not (len(x_tilde) == len(x) == len(leftovers)) or len(x) == 0:
        raise InvalidInputError("l_rec needs matching nonempty sequences")
    total = 0.0
    for xt, xi, lo in zip(x_tilde, x, leftovers):
        lo = binarize(lo)
        total += masked_l1(xt, xi, lo) + masked_l1(xt, xi, 1 - lo)
    return total / len(x)


def mean_luma_critic(frame):
    return float(luma(frame).mean(dtype=np.float64))


def l_adv(x_tilde, critic: Callable = mean_luma_critic):
    if len(x_tilde) == 0:
        raise InvalidInputError("l_adv needs at least one frame")
    return -sum(critic(f) for f in x_tilde) / len(x_tilde)


def total(losses, weights=LossWeights()):
    """Weighted sum of the eight loss components (missing components count as 0)."""
    w = asdict(weights)
    return float(sum(w[k] * float(losses.get(k, 0.0)) for k in LOSS_NAMES))


def compute_all(sample, aligned_refs, c_visible, leftovers, x_tilde, phi=default_phi, critic=mean_luma_critic):
    """All eight components as a dict keyed by :data:`LOSS_NAMES`."""
    return {
        "align": l_align(sample, aligned_refs),
        "vis": l_hole_visible(sample, c_visible),
        "leftover": l_hole_leftover(sample, leftovers),
        "nonhole": l_non_hole(sample),
        "percep": l_perceptual(sample, phi),
        "style": l_style(sample, phi),
        "rec": l_rec(x_tilde, sample.frames, leftovers),
        "adv": l_adv(x_tilde, critic),
    }
