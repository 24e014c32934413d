"""Joint affine + optical-flow alignment of reference frames to a target.

Warps use backward sampling: output pixel ``p`` of an aligned reference reads
the reference at ``T(p)`` (affine) or ``p + flow(p)`` (flow).  When a
reference is the target seen by a camera displaced by ``d`` (so
``ref(p) == target(p + d)``), the recovered warp is a translation by ``-d``.

The affine branch is a coarse-to-fine inverse-compositional registration
minimising a robust (IRLS-reweighted) L1 photometric error over pixels
visible in both frames.  The flow branch is pyramidal Lucas-Kanade.  Both
are plain functions, so any callable with the same signature can stand in.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

try:  # optional, only used to speed up the flow median filter
    import cv2 as _cv2
except ImportError:  # pragma: no cover
    _cv2 = None

from .core import (
    DTYPE,
    AlignmentUnavailable,
    InvalidInputError,
    NoUsableReference,
    as_frame,
    as_mask,
    binarize,
    luma,
)
from .pyramid import push_pull_fill, resize_bilinear

log = logging.getLogger(__name__)

AFFINE = "affine"
FLOW = "flow"
BOUNDS_TOL = 1e-4


@dataclass(frozen=True)
class AffineTransform:
    """2x3 backward-sampling matrix: ``ref_xy = A @ target_xy + t``."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64).reshape(2, 3)
        if not np.all(np.isfinite(m)):
            raise InvalidInputError("affine matrix must be finite")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls):
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @classmethod
    def translation(cls, tx, ty):
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty]]))

    @property
    def linear(self):
        return self.matrix[:, :2]

    @property
    def offset(self):
        return self.matrix[:, 2]

    @property
    def det(self):
        return float(np.linalg.det(self.linear))

    def homogeneous(self):
        return np.vstack([self.matrix, [0.0, 0.0, 1.0]])

    def compose(self, other):
        """``self o other``: apply ``other`` first, then ``self``."""
        return AffineTransform((self.homogeneous() @ other.homogeneous())[:2])

    def inverse(self):
        return AffineTransform(np.linalg.inv(self.homogeneous())[:2])

    def map(self, x, y):
        m = self.matrix
        return m[0, 0] * x + m[0, 1] * y + m[0, 2], m[1, 0] * x + m[1, 1] * y + m[1, 2]

    def rescaled(self, k):
        """Express the transform on a grid ``k`` times finer (half-pixel centres)."""
        c = (k - 1) / 2.0
        a = self.linear
        t = k * self.offset - (a - np.eye(2)) @ np.array([c, c])
        return AffineTransform(np.column_stack([a, t]))

    def coarsened(self, k):
        """Inverse of :meth:`rescaled`."""
        c = (k - 1) / 2.0
        a = self.linear
        t = (self.offset + (a - np.eye(2)) @ np.array([c, c])) / k
        return AffineTransform(np.column_stack([a, t]))

    def is_sane(self):
        return 0.25 <= self.det <= 4.0


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement: target pixel ``p`` samples the reference at ``p + (u, v)``."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=DTYPE)
        v = np.asarray(self.v, dtype=DTYPE)
        if u.shape != v.shape or u.ndim != 2:
            raise InvalidInputError("flow components must be matching 2-D maps")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise InvalidInputError("flow must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, h, w):
        return cls(np.zeros((h, w), DTYPE), np.zeros((h, w), DTYPE))

    @classmethod
    def uniform(cls, h, w, du, dv):
        return cls(np.full((h, w), du, DTYPE), np.full((h, w), dv, DTYPE))

    @property
    def shape(self):
        return self.u.shape

    def rescaled(self, k):
        """Bilinearly upsample to a grid ``k`` times finer and scale the vectors by ``k``."""
        h, w = self.shape
        u = resize_bilinear(self.u, h * k, w * k) * DTYPE(k)
        v = resize_bilinear(self.v, h * k, w * k) * DTYPE(k)
        return FlowField(u, v)


@dataclass
class AlignedReference:
    frame: np.ndarray
    mask: np.ndarray
    validity: np.ndarray
    source_index: int
    branch: str
    transform: AffineTransform | FlowField | None = None


@dataclass
class Reference:
    """A candidate reference frame at the processing resolution."""

    frame: np.ndarray
    mask: np.ndarray
    index: int
    extras: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# sampling


def sample_bilinear(img, xs, ys):
    """Bilinear lookup of ``img`` at float coordinates.

    Returns ``(values, valid)``.  Coordinates outside ``[0, W-1] x [0, H-1]``
    (by more than ``BOUNDS_TOL`` px, which absorbs round-off in estimated
    warps) are invalid and read as 0.
    """
    img = np.asarray(img)
    h, w = img.shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    e = BOUNDS_TOL
    valid = (xs >= -e) & (xs <= w - 1 + e) & (ys >= -e) & (ys <= h - 1 + e)
    xc = np.clip(xs, 0, w - 1)
    yc = np.clip(ys, 0, h - 1)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xc - x0).astype(DTYPE)
    fy = (yc - y0).astype(DTYPE)
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    vmask = valid[..., None] if img.ndim == 3 else valid
    return np.where(vmask, out, 0).astype(DTYPE), valid


def _grid(h, w):
    ys, xs = np.mgrid[0:h, 0:w]
    return xs.astype(np.float64), ys.astype(np.float64)


def _warp(ref, ref_mask, xs, ys, index, branch, transform):
    frame, valid = sample_bilinear(ref, xs, ys)
    if ref_mask.any():
        msample, _ = sample_bilinear(ref_mask, xs, ys)
        # any hole contribution to the interpolated sample marks the pixel as hole
        mask = np.where(valid, msample > 1e-6, True).astype(DTYPE)
    else:
        mask = (~valid).astype(DTYPE)
    return AlignedReference(
        frame=frame,
        mask=mask,
        validity=valid.astype(DTYPE),
        source_index=index,
        branch=branch,
        transform=transform,
    )


def warp_affine(ref, ref_mask, transform, index=-1):
    ref = as_frame(ref, "ref")
    ref_mask = as_mask(ref_mask, ref.shape, "ref_mask")
    xs, ys = _grid(*ref.shape[:2])
    sx, sy = transform.map(xs, ys)
    return _warp(ref, ref_mask, sx, sy, index, AFFINE, transform)


def warp_flow(ref, ref_mask, flow, index=-1):
    ref = as_frame(ref, "ref")
    ref_mask = as_mask(ref_mask, ref.shape, "ref_mask")
    if flow.shape != ref.shape[:2]:
        raise InvalidInputError(f"flow shape {flow.shape} does not match frame {ref.shape[:2]}")
    xs, ys = _grid(*ref.shape[:2])
    return _warp(ref, ref_mask, xs + flow.u, ys + flow.v, index, FLOW, flow)


def masked_l1(target, target_mask, aligned):
    """Mean absolute difference over pixels visible in both frames.

    Returns ``inf`` when the two frames share no visible pixel.
    """
    region = (1 - binarize(target_mask)) * (1 - aligned.mask) * aligned.validity
    n = float(region.sum())
    if n == 0:
        return float("inf")
    diff = np.abs(np.asarray(target, DTYPE) - aligned.frame).mean(axis=2)
    return float((diff * region).sum() / n)


# --------------------------------------------------------------------------
# affine registration


def _halve(img):
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _halve_visibility(vis):
    h, w = vis.shape
    vis = vis[: h - h % 2, : w - w % 2]
    return vis.reshape(h // 2, 2, w // 2, 2).min(axis=(1, 3))


def _gradients(img):
    gy, gx = np.gradient(img)
    return gx, gy


def estimate_affine(
    target,
    target_mask,
    ref,
    ref_mask,
    levels=3,
    max_iter=50,
    tol=1e-4,
    robust_delta=0.02,
    min_overlap=0.01,
):
    """Affine transform registering ``ref`` onto ``target``.

    Raises :class:`AlignmentUnavailable` when fewer than ``min_overlap`` of
    the pixels are visible in both frames.  The result never has a larger
    masked L1 residual than the identity.
    """
    target = as_frame(target, "target")
    ref = as_frame(ref, "ref")
    if target.shape != ref.shape:
        raise InvalidInputError("target and reference must share dimensions")
    target_mask = as_mask(target_mask, target.shape, "target_mask")
    ref_mask = as_mask(ref_mask, ref.shape, "ref_mask")

    vis_t = 1.0 - binarize(target_mask).astype(np.float64)
    vis_r = 1.0 - binarize(ref_mask).astype(np.float64)
    if (vis_t * vis_r).mean() < min_overlap:
        raise AlignmentUnavailable("insufficient jointly visible area")

    pyr = [(luma(target).astype(np.float64), vis_t, luma(ref).astype(np.float64), vis_r)]
    for _ in range(levels - 1):
        t, vt, r, vr = pyr[-1]
        if min(t.shape) < 16:
            break
        pyr.append((_halve(t), _halve_visibility(vt), _halve(r), _halve_visibility(vr)))

    est = _translation_init(*pyr[-1]).rescaled(2 ** (len(pyr) - 1))
    for lvl in range(len(pyr) - 1, -1, -1):
        k = 2 ** lvl
        t_img, vt, r_img, vr = pyr[lvl]
        local = _register_level(est.coarsened(k), t_img, vt, r_img, vr, max_iter, tol, robust_delta)
        est = local.rescaled(k)

    if not est.is_sane():
        log.debug("affine estimate out of bounds (det=%.3f); using identity", est.det)
        return AffineTransform.identity()
    ident = AffineTransform.identity()
    if masked_l1(target, target_mask, warp_affine(ref, ref_mask, est)) > masked_l1(
        target, target_mask, warp_affine(ref, ref_mask, ident)
    ):
        return ident
    return est


def _level_l1(tr, t_img, vis_t, r_img, vis_r):
    xs, ys = _grid(*t_img.shape)
    sx, sy = tr.map(xs, ys)
    warped, valid = sample_bilinear(r_img, sx, sy)
    joint = (vis_t > 0) & valid
    if vis_r.min() < 1:
        rvis, _ = sample_bilinear(vis_r.astype(DTYPE), sx, sy)
        joint &= rvis >= 1 - 1e-6
    if joint.sum() < 0.05 * joint.size:
        return np.inf
    return float(np.abs(warped[joint] - t_img[joint]).mean())


def _translation_init(t_img, vis_t, r_img, vis_r, peaks=4):
    """Integer translation from masked phase correlation, kept only if it beats identity.

    The strongest peaks of a Hann-windowed and of an unwindowed correlation
    are all tried; the window suppresses border artefacts but also the
    overlap of frames that are far apart.
    """
    h, w = t_img.shape
    hann = np.outer(np.hanning(h), np.hanning(w))

    def prep(img, vis, win):
        sel = vis > 0
        mean = img[sel].mean() if sel.any() else 0.0
        out = np.where(sel, img - mean, 0.0)
        return out * win if win is not None else out

    cands = [AffineTransform.identity()]
    for win in (hann, None):
        ft = np.fft.rfft2(prep(t_img, vis_t, win))
        fr = np.fft.rfft2(prep(r_img, vis_r, win))
        cross = fr * np.conj(ft)
        cross /= np.maximum(np.abs(cross), 1e-12)
        corr = np.fft.irfft2(cross, s=(h, w))
        for flat in np.argsort(corr, axis=None)[::-1][:peaks]:
            dy, dx = np.unravel_index(flat, corr.shape)
            # the correlation is periodic: shifts beyond half the frame alias
            for ay in (dy, dy - h):
                for ax in (dx, dx - w):
                    cands.append(AffineTransform.translation(float(ax), float(ay)))
    # candidates are scored in a fixed order; ties keep the earlier one
    scores = [_level_l1(c, t_img, vis_t, r_img, vis_r) for c in cands]
    return cands[int(np.argmin(scores))]


def _register_level(init,t_img, vis_t, r_img, vis_r, max_iter, tol, delta):
    h, w = t_img.shape
    xs, ys = _grid(h, w)
    gx, gy = _gradients(t_img)
    # gradients touching a hole pixel are unreliable
    vis_t = ndimage.minimum_filter(vis_t, size=3, mode="nearest")
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    sc = max(h, w) / 2.0
    xn = (xs - cx) / sc
    yn = (ys - cy) / sc
    sd = np.stack([gx * xn, gx * yn, gy * xn, gy * yn, gx, gy], axis=-1)
    vis_r_f = vis_r.astype(DTYPE)

    est = init
    min_pixels = max(12, int(0.002 * h * w))
    ref_has_hole = vis_r.min() < 1
    for _ in range(max_iter):
        sx, sy = est.map(xs, ys)
        warped, valid = sample_bilinear(r_img, sx, sy)
        joint = (vis_t > 0) & valid
        if ref_has_hole:
            rvis, _ = sample_bilinear(vis_r_f, sx, sy)
            joint &= rvis >= 1 - 1e-6
        if joint.sum() < min_pixels:
            break
        err = warped.astype(np.float64)[joint] - t_img[joint]
        wts = 1.0 / np.maximum(np.abs(err), delta)
        a = sd[joint]
        hess = a.T @ (a * wts[:, None])
        rhs = a.T @ (wts * err)
        try:
            dp = np.linalg.solve(hess + 1e-9 * np.trace(hess) * np.eye(6), rhs)
        except np.linalg.LinAlgError:
            break
        d = np.array([[dp[0], dp[1]], [dp[2], dp[3]]]) / sc
        c = np.array([cx, cy])
        delta_t = np.array([dp[4], dp[5]]) - d @ c
        step = AffineTransform(np.column_stack([np.eye(2) + d, delta_t]))
        try:
            est = est.compose(step.inverse())
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(est.matrix)) or not 0.05 < est.det < 20:
            return init
        if np.linalg.norm(dp) < tol:
            break
    return est


# --------------------------------------------------------------------------
# optical flow


def _box(a, size):
    return ndimage.uniform_filter(a, size=size, mode="nearest")


def _halve_padded(img):
    h, w = img.shape
    if h % 2 or w % 2:
        img = np.pad(img, ((0, h % 2), (0, w % 2)), mode="edge")
    return img.reshape(img.shape[0] // 2, 2, img.shape[1] // 2, 2).mean(axis=(1, 3))


def _halve_weight(wt):
    h, w = wt.shape
    if h % 2 or w % 2:
        wt = np.pad(wt, ((0, h % 2), (0, w % 2)), mode="constant")
    return wt.reshape(wt.shape[0] // 2, 2, wt.shape[1] // 2, 2).min(axis=(1, 3))


def estimate_flow(
    target,
    ref,
    levels=4,
    window=7,
    iterations=3,
    min_eig=1e-4,
    target_mask=None,
    ref_mask=None,
):
    """Pyramidal Lucas-Kanade flow such that ``ref(p + flow(p)) ~ target(p)``.

    Pixels whose window structure tensor is degenerate keep the flow
    propagated from the coarser level (zero at the coarsest).  When masks are
    given, hole pixels are excluded from the window sums and the flow inside
    the target hole is interpolated from its surroundings.
    """
    target = as_frame(target, "target")
    ref = as_frame(ref, "ref")
    if target.shape != ref.shape:
        raise InvalidInputError("target and reference must share dimensions")
    h, w = target.shape[:2]
    wt = np.ones((h, w))
    if target_mask is not None:
        wt *= 1.0 - binarize(as_mask(target_mask, target.shape))
    t_hole = wt <= 0
    # the reference weight lives in reference coordinates and is warped along
    wr = np.ones((h, w))
    if ref_mask is not None:
        wr *= 1.0 - binarize(as_mask(ref_mask, ref.shape))

    pyr = [(luma(target).astype(np.float64), luma(ref).astype(np.float64), wt, wr)]
    for _ in range(levels - 1):
        t, r, ww, rw = pyr[-1]
        if min(t.shape) < 2 * window:
            break
        pyr.append((_halve_padded(t), _halve_padded(r), _halve_weight(ww), _halve_weight(rw)))

    u = v = None
    for lvl in range(len(pyr) - 1, -1, -1):
        t_img, r_img, ww, rw = pyr[lvl]
        lh, lw = t_img.shape
        if u is None:
            u = np.zeros((lh, lw))
            v = np.zeros((lh, lw))
        else:
            ph, pw = u.shape
            u = resize_bilinear(u.astype(DTYPE), ph * 2, pw * 2)[:lh, :lw].astype(np.float64) * 2
            v = resize_bilinear(v.astype(DTYPE), ph * 2, pw * 2)[:lh, :lw].astype(np.float64) * 2
        u, v = _lk_level(t_img, r_img, ww, u, v, window, iterations, min_eig, rw)

    u = np.clip(u, -w, w).astype(DTYPE)
    v = np.clip(v, -h, h).astype(DTYPE)
    if t_hole.any() and not t_hole.all():
        # flow near the hole rests on partial windows; re-derive it from further out
        fill_region = ndimage.binary_dilation(t_hole, iterations=window // 2 + 1).astype(DTYPE)
        u = push_pull_fill(u, fill_region)
        v = push_pull_fill(v, fill_region)
    return FlowField(u, v)


def _median5(a):
    """5x5 median with replicated borders, computed in float32.

    OpenCV's median is used when it is installed (it is much faster); both
    paths give identical results.
    """
    a = np.ascontiguousarray(a, dtype=np.float32)
    if _cv2 is not None:
        return _cv2.medianBlur(a, 5).astype(np.float64)
    return ndimage.median_filter(a, size=5, mode="nearest").astype(np.float64)


_HOLE_MARGIN = 9  # 4 px: Gaussian (sigma 1) reach plus the gradient stencil


def _lk_level(t_img, r_img, wt, u, v, window, iterations, min_eig, wr=None):
    h, w = t_img.shape
    xs, ys = _grid(h, w)
    t_img = ndimage.gaussian_filter(t_img, 1.0, mode="nearest")
    r_img = ndimage.gaussian_filter(r_img, 1.0, mode="nearest").astype(DTYPE)
    tgx, tgy = _gradients(t_img)
    # drop pixels whose smoothed value or gradient stencil touches a hole
    wt = ndimage.minimum_filter(wt, size=_HOLE_MARGIN, mode="nearest")
    if wr is not None and wr.min() < 1:
        wr = ndimage.minimum_filter(wr, size=_HOLE_MARGIN, mode="nearest").astype(DTYPE)
    else:
        wr = None
    rgx, rgy = _gradients(r_img.astype(np.float64))
    good = None
    for _ in range(iterations):
        warped, valid = sample_bilinear(r_img, xs + u, ys + v)
        wgx, _ = sample_bilinear(rgx.astype(DTYPE), xs + u, ys + v)
        wgy, _ = sample_bilinear(rgy.astype(DTYPE), xs + u, ys + v)
        # symmetric gradient: average of target and warped reference
        gx = 0.5 * (tgx + wgx)
        gy = 0.5 * (tgy + wgy)
        ww = wt * valid
        if wr is not None:
            rv, _ = sample_bilinear(wr, xs + u, ys + v)
            ww = ww * (rv >= 1 - 1e-6)
        sxx = _box(ww * gx * gx, window)
        sxy = _box(ww * gx * gy, window)
        syy = _box(ww * gy * gy, window)
        tr = sxx + syy
        det = sxx * syy - sxy * sxy
        lam_min = 0.5 * (tr - np.sqrt(np.maximum(tr * tr - 4 * det, 0.0)))
        good = lam_min > min_eig
        safe_det = np.where(good, det, 1.0)
        it = np.where(valid, warped.astype(np.float64) - t_img, 0.0) * ww
        bx = _box(gx * it, window)
        by = _box(gy * it, window)
        du = -(syy * bx - sxy * by) / safe_det
        dv = -(sxx * by - sxy * bx) / safe_det
        u = np.where(good, u + du, u)
        v = np.where(good, v + dv, v)
        u = _median5(u)
        v = _median5(v)
    if not good.all() and good.any():
        # untextured pixels inherit flow from nearby textured ones
        hole = (~good).astype(DTYPE)
        u = push_pull_fill(u.astype(DTYPE), hole).astype(np.float64)
        v = push_pull_fill(v.astype(DTYPE), hole).astype(np.float64)
    return u, v


# --------------------------------------------------------------------------
# joint alignment


AffineEstimator = Callable[..., AffineTransform]
FlowEstimator = Callable[..., FlowField]


def joint_align(
    target,
    target_mask,
    refs: Sequence[Reference],
    target_index=0,
    flow_radius=2,
    affine_estimator: AffineEstimator = estimate_affine,
    flow_estimator: FlowEstimator | None = None,
    use_affine=True,
    use_flow=True,
    flow_levels=4,
    mapper=map,
):
    """Align every reference with both branches where applicable.

    All references go through the affine branch; those within
    ``flow_radius`` frames of the target are also flow-aligned.  The result
    lists affine-aligned references in temporal order followed by the
    flow-aligned ones.  ``mapper`` (``map`` or an executor's ordered
    ``map``) runs the per-reference work; the output order never depends on it.
    """
    if not refs:
        raise NoUsableReference("no reference frames supplied")
    target = as_frame(target, "target")
    target_mask = as_mask(target_mask, target.shape, "target_mask")
    ordered = sorted(refs, key=lambda r: r.index)

    def one(ref):
        a = f = None
        if use_affine:
            try:
                tr = affine_estimator(target, target_mask, ref.frame, ref.mask)
            except AlignmentUnavailable as exc:
                log.info("reference %d skipped by affine branch: %s", ref.index, exc)
            else:
                a = warp_affine(ref.frame, ref.mask, tr, ref.index)
        if use_flow and abs(ref.index - target_index) <= flow_radius:
            if flow_estimator is None:
                flow = estimate_flow(
                    target, ref.frame, levels=flow_levels, target_mask=target_mask, ref_mask=ref.mask
                )
            else:
                flow = flow_estimator(target, ref.frame, flow_levels)
            f = warp_flow(ref.frame, ref.mask, flow, ref.index)
        return a, f

    pairs = list(mapper(one, ordered))
    affine_out = [a for a, _ in pairs if a is not None]
    flow_out = [f for _, f in pairs if f is not None]

    out = affine_out + flow_out
    if not out:
        raise NoUsableReference("all references failed alignment")
    return out
