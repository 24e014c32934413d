"""Synthetic video sequences with exact ground truth.

A procedural scene is rendered once on a full-resolution canvas; frame ``k``
shows the scene through a per-frame transform ``T_k`` that maps frame pixel
coordinates to scene coordinates (``frame_k(p) = scene(T_k p)``), optionally
plus a smooth local displacement.  Low-resolution frames are the area
downsample of the full-resolution ones, so both resolutions share one scene.
Hole pixels are zeroed in the emitted frames.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import ndimage

from .alignment import AffineTransform, sample_bilinear
from .core import DTYPE, InvalidInputError
from .pyramid import downsample, downsample_mask

TEXTURES = ("pink-noise", "checker", "two-texture", "gradient")
MOTIONS = ("static", "pan", "affine-drift", "local-warp")
MASK_SHAPES = ("rect", "ellipse", "blob")
MASK_MOTIONS = ("static", "linear", "scene")
BORDER = 4  # low-res pixels kept free of holes


@dataclass(frozen=True)
class SynthSpec:
    texture: str = "pink-noise"
    motion: str = "static"
    velocity: tuple = (0.0, 0.0)       # full-res px / frame (pan, and base motion of local-warp)
    drift: tuple = (0.0, 0.0)          # rotation (rad) and log-scale per frame, about the frame centre
    warp_amplitude: float = 0.0        # full-res px / frame of local displacement
    warp_wavelength: float = 0.5       # fraction of frame width
    mask_shape: str = "rect"
    mask_size: tuple = (0.2, 0.2)      # (h, w) fraction of the frame
    mask_center: tuple = (0.5, 0.5)    # (y, x) fraction of the frame
    mask_motion: str = "static"
    mask_velocity: tuple = (0.0, 0.0)  # full-res px / frame (x, y)
    frames: int = 5
    low_size: tuple = (512, 512)       # (H, W) at the processing resolution
    scale: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.texture not in TEXTURES:
            raise InvalidInputError(f"unknown texture {self.texture!r}")
        if self.motion not in MOTIONS:
            raise InvalidInputError(f"unknown motion {self.motion!r}")
        if self.mask_shape not in MASK_SHAPES:
            raise InvalidInputError(f"unknown mask shape {self.mask_shape!r}")
        if self.mask_motion not in MASK_MOTIONS:
            raise InvalidInputError(f"unknown mask motion {self.mask_motion!r}")
        if not 1 <= self.frames <= 64:
            raise InvalidInputError("frames must be in [1, 64]")

    @property
    def high_size(self):
        return (self.low_size[0] * self.scale, self.low_size[1] * self.scale)


@dataclass
class SceneWarp:
    """Frame-to-scene mapping of one frame: affine part plus optional displacement field."""

    affine: AffineTransform
    displacement: np.ndarray | None = None  # (H, W, 2) full-res px, x then y

    def map(self, xs, ys):
        qx, qy = self.affine.map(xs, ys)
        if self.displacement is not None:
            qx = qx + self.displacement[..., 0]
            qy = qy + self.displacement[..., 1]
        return qx, qy


@dataclass
class SynthSequence:
    spec: SynthSpec
    frames: list
    masks: list
    ground_truth: list
    transforms: list
    extras: dict = field(default_factory=dict)

    @property
    def scale(self):
        return self.spec.scale

    @cached_property
    def low_ground_truth(self):
        return [downsample(g, self.scale) for g in self.ground_truth]

    @cached_property
    def low_masks(self):
        return [downsample_mask(m, self.scale) for m in self.masks]

    @cached_property
    def low_frames(self):
        return [g * (1 - m)[..., None] for g, m in zip(self.low_ground_truth, self.low_masks)]

    def relative_transform(self, target, ref, low=True):
        """Backward warp aligning frame ``ref`` onto frame ``target`` (affine part only)."""
        tr = self.transforms[ref].affine.inverse().compose(self.transforms[target].affine)
        return tr.coarsened(self.scale) if low else tr


# --------------------------------------------------------------------------
# textures


def _pink_noise(rng, h, w, channels=3, exponent=1.0):
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    f = np.sqrt(fx * fx + fy * fy)
    f[0, 0] = 1.0
    amp = 1.0 / f ** exponent
    amp[0, 0] = 0.0
    out = np.empty((h, w, channels))
    shared = rng.standard_normal((h, w // 2 + 1)) + 1j * rng.standard_normal((h, w // 2 + 1))
    for c in range(channels):
        own = rng.standard_normal((h, w // 2 + 1)) + 1j * rng.standard_normal((h, w // 2 + 1))
        out[..., c] = np.fft.irfft2((0.8 * shared + 0.6 * own) * amp, s=(h, w))
    out -= out.mean(axis=(0, 1))
    out /= 4 * out.std()
    return np.clip(out + 0.5, 0.02, 0.98)


def _checker(xs, ys, period, c0, c1):
    sel = ((np.floor(xs / (period / 2)) + np.floor(ys / (period / 2))) % 2).astype(bool)
    return np.where(sel[..., None], np.asarray(c1), np.asarray(c0))


def _stripes(xs, ys, period, c0, c1):
    t = 0.5 + 0.5 * np.sin(2 * np.pi * (xs + ys) / period)
    return np.asarray(c0) * (1 - t[..., None]) + np.asarray(c1) * t[..., None]


def render_texture(kind, h, w, rng, origin=(0.0, 0.0), split_x=None):
    """Texture on an ``h x w`` canvas whose top-left pixel sits at scene ``origin`` (x, y)."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xs += origin[0]
    ys += origin[1]
    if kind == "pink-noise":
        return _pink_noise(rng, h, w)
    if kind == "checker":
        base = _checker(xs, ys, 16, (0.2, 0.25, 0.3), (0.8, 0.75, 0.6))
        return np.clip(base + 0.1 * (_pink_noise(rng, h, w) - 0.5), 0, 1)
    if kind == "gradient":
        g = np.stack([xs / max(w, 1), ys / max(h, 1), 0.5 + 0.0 * xs], axis=-1)
        g = (g - g.min(axis=(0, 1))) / np.maximum(np.ptp(g, axis=(0, 1)), 1e-9)
        return 0.1 + 0.8 * g
    if kind == "two-texture":
        split = xs.mean() if split_x is None else split_x
        a = _checker(xs, ys, 16, (0.15, 0.35, 0.2), (0.7, 0.85, 0.45))
        b = _stripes(xs, ys, 12, (0.75, 0.3, 0.25), (0.95, 0.7, 0.55))
        out = np.where((xs < split)[..., None], a, b)
        return np.clip(out + 0.06 * (_pink_noise(rng, h, w) - 0.5), 0, 1)
    raise InvalidInputError(f"unknown texture {kind!r}")


# --------------------------------------------------------------------------
# motion and masks


def _frame_transforms(spec, h, w):
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    out = []
    for k in range(spec.frames):
        if spec.motion in ("pan", "local-warp"):
            aff = AffineTransform.translation(k * spec.velocity[0], k * spec.velocity[1])
        elif spec.motion == "affine-drift":
            ang = k * spec.drift[0]
            sc = np.exp(k * spec.drift[1])
            lin = sc * np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
            c = np.array([cx, cy])
            t = c - lin @ c + k * np.asarray(spec.velocity, dtype=np.float64)
            aff = AffineTransform(np.column_stack([lin, t]))
        else:
            aff = AffineTransform.identity()
        disp = None
        if spec.motion == "local-warp" and spec.warp_amplitude and k:
            ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
            lam = spec.warp_wavelength * w
            a = k * spec.warp_amplitude
            disp = np.stack(
                [a * np.sin(2 * np.pi * ys / lam), a * np.cos(2 * np.pi * xs / lam)], axis=-1
            )
        out.append(SceneWarp(aff, disp))
    return out


def _shape_mask(spec, h, w, center, rng):
    mh, mw = spec.mask_size[0] * h, spec.mask_size[1] * w
    cy, cx = center
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    if spec.mask_shape == "rect":
        m = (np.abs(xs + 0.5 - cx) <= mw / 2) & (np.abs(ys + 0.5 - cy) <= mh / 2)
    else:
        r = ((xs + 0.5 - cx) / (mw / 2)) ** 2 + ((ys + 0.5 - cy) / (mh / 2)) ** 2
        if spec.mask_shape == "ellipse":
            m = r <= 1
        else:
            n = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=max(mh, mw) / 8)
            n /= np.abs(n).max() + 1e-12
            m = r <= 1 + 0.6 * n
    return m


def _clear_border(m, spec):
    b = BORDER * spec.scale
    m = m.copy()
    m[:b] = m[-b:] = False
    m[:, :b] = m[:, -b:] = False
    return m


def generate(spec: SynthSpec) -> SynthSequence:
    """Render a sequence; identical specs give bit-identical output."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.high_size
    warps = _frame_transforms(spec, h, w)

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = [wp.map(xs, ys) for wp in warps]
    lo_x = min(float(c[0].min()) for c in coords)
    hi_x = max(float(c[0].max()) for c in coords)
    lo_y = min(float(c[1].min()) for c in coords)
    hi_y = max(float(c[1].max()) for c in coords)
    ox, oy = np.floor(lo_x) - 2, np.floor(lo_y) - 2
    ch, cw = int(np.ceil(hi_y - oy)) + 3, int(np.ceil(hi_x - ox)) + 3
    split_x = 0.5 * (w - 1)
    canvas = render_texture(spec.texture, ch, cw, rng, origin=(ox, oy), split_x=split_x).astype(DTYPE)

    center = (spec.mask_center[0] * h, spec.mask_center[1] * w)
    mask0 = _shape_mask(spec, h, w, center, rng)

    frames, masks, gts = [], [], []
    for k, (qx, qy) in enumerate(coords):
        gt, _ = sample_bilinear(canvas, qx - ox, qy - oy)
        if spec.mask_motion == "static":
            m = mask0
        elif spec.mask_motion == "linear":
            dx, dy = k * spec.mask_velocity[0], k * spec.mask_velocity[1]
            m = ndimage.shift(mask0.astype(np.float64), (dy, dx), order=0, mode="constant") > 0.5
        elif k == 0:
            m = mask0
        else:
            # attached to the scene: cover the scene points frame 0 covers
            fx, fy = warps[0].affine.inverse().map(qx, qy)
            v, _ = sample_bilinear(mask0.astype(DTYPE), fx, fy)
            m = v > 0
        m = _clear_border(m, spec)
        m = m.astype(DTYPE)
        gts.append(gt)
        masks.append(m)
        frames.append((gt * (1 - m)[..., None]).astype(DTYPE))
    return SynthSequence(spec, frames, masks, gts, warps)


# --------------------------------------------------------------------------
# standard suites


@dataclass(frozen=True)
class Suite:
    name: str
    description: str
    make: Callable[..., SynthSpec]

    def spec(self, seed=0, low_size=(128, 128), scale=4, frames=5, **overrides):
        return replace(self.make(seed, low_size, scale, frames), **overrides)


def _static_spec(seed, low_size, scale, frames):
    rng = np.random.default_rng(seed)
    h, w = low_size
    size = 0.16
    ang = rng.uniform(0, 2 * np.pi)
    speed = 0.7 * size * min(h, w) * scale
    vel = (round(speed * np.cos(ang)), round(speed * np.sin(ang)))
    return SynthSpec(
        texture="pink-noise", motion="static", mask_shape="rect", mask_size=(size, size),
        mask_center=(0.5 - 2 * vel[1] / (h * scale), 0.5 - 2 * vel[0] / (w * scale)),
        mask_motion="linear", mask_velocity=vel, frames=frames, low_size=low_size, scale=scale, seed=seed,
    )


def _pan_spec(seed, low_size, scale, frames):
    rng = np.random.default_rng(seed + 1000)
    h, w = low_size
    size = 0.1
    # integer low-res velocity wide enough that frames two apart clear the hole
    need = int(np.ceil(size * min(h, w) / 2)) + 2
    ang = rng.uniform(0, 2 * np.pi)
    mag = need + rng.integers(0, 3)
    vel = (int(round(mag * np.cos(ang))), int(round(mag * np.sin(ang))))
    if max(abs(vel[0]), abs(vel[1])) < need:
        vel = (need * (1 if vel[0] >= 0 else -1), vel[1])
    return SynthSpec(
        texture="pink-noise", motion="pan", velocity=(vel[0] * scale, vel[1] * scale),
        mask_shape=("rect", "ellipse", "blob")[seed % 3], mask_size=(size, size), mask_center=(0.5, 0.5),
        mask_motion="static", frames=frames, low_size=low_size, scale=scale, seed=seed,
    )


def _local_deform_spec(seed, low_size, scale, frames):
    rng = np.random.default_rng(seed + 2000)
    h, w = low_size
    size = 0.14
    vel = int(round(0.8 * size * min(h, w)))
    return SynthSpec(
        texture="pink-noise", motion="local-warp", velocity=(0.0, 0.0),
        warp_amplitude=float(rng.uniform(1.5, 2.5)) * scale, warp_wavelength=0.5,
        mask_shape="ellipse", mask_size=(size, size), mask_center=(0.5, 0.5 - 1.0 * vel / w),
        mask_motion="linear", mask_velocity=(vel * scale, 0), frames=frames, low_size=low_size,
        scale=scale, seed=seed,
    )


def _two_texture_spec(seed, low_size, scale, frames):
    return SynthSpec(
        texture="two-texture", motion="static", mask_shape="ellipse", mask_size=(0.18, 0.14),
        mask_center=(0.5, 0.25), mask_motion="static", frames=frames, low_size=low_size, scale=scale, seed=seed,
    )


def _no_coverage_spec(seed, low_size, scale, frames):
    return SynthSpec(
        texture="pink-noise", motion="static", mask_shape="blob", mask_size=(0.2, 0.2),
        mask_center=(0.5, 0.5), mask_motion="scene", frames=frames, low_size=low_size, scale=scale, seed=seed,
    )


_SUITES = (
    Suite("static", "static camera, hole sliding across an unchanging scene", _static_spec),
    Suite("pan", "camera pan with a hole fixed in the frame", _pan_spec),
    Suite("local-deform", "smooth non-rigid deformation with a moving hole", _local_deform_spec),
    Suite("two-texture", "two periodic textures, hole inside one of them, no temporal coverage", _two_texture_spec),
    Suite("no-coverage", "hole covers the same scene content in every frame", _no_coverage_spec),
)


def standard_suites():
    return list(_SUITES)


def get_suite(name):
    for s in _SUITES:
        if s.name == name:
            return s
    raise InvalidInputError(f"unknown suite {name!r}; choose from {[s.name for s in _SUITES]}")
