"""Shared value types and elementwise primitives.

Frames are ``float32`` arrays of shape ``(H, W, 3)``; masks are ``float32``
arrays of shape ``(H, W)`` where 1 marks a hole.  Residual frames use the
same layout but hold signed values.  Everything downstream passes plain
numpy arrays around; the helpers here only validate and coerce.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DTYPE = np.float32

# Rec. 601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=DTYPE)


class InvalidInputError(ValueError):
    """Raised when an array does not satisfy an operation's preconditions."""


class AlignmentUnavailable(RuntimeError):
    """A reference cannot be registered to the target (too little overlap)."""


class NoUsableReference(RuntimeError):
    """Every candidate reference was rejected during alignment."""


class SpatialContextUnavailable(RuntimeError):
    """No hole-free patch exists to serve as spatial context."""


def as_frame(a, name="frame"):
    """Coerce ``a`` to a float32 ``(H, W, 3)`` array and validate it."""
    a = np.asarray(a, dtype=DTYPE)
    if a.ndim != 3 or a.shape[2] != 3:
        raise InvalidInputError(f"{name} must have shape (H, W, 3), got {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidInputError(f"{name} is empty: {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return a


def as_mask(m, shape=None, name="mask"):
    """Coerce ``m`` to a float32 ``(H, W)`` array in [0, 1].

    ``shape`` (if given) is the ``(H, W)`` the mask has to match.
    """
    m = np.asarray(m, dtype=DTYPE)
    if m.ndim == 3 and m.shape[2] == 1:
        m = m[..., 0]
    if m.ndim != 2:
        raise InvalidInputError(f"{name} must have shape (H, W), got {m.shape}")
    if shape is not None and m.shape != tuple(shape[:2]):
        raise InvalidInputError(f"{name} shape {m.shape} does not match {tuple(shape[:2])}")
    if not np.all(np.isfinite(m)) or m.min(initial=0) < 0 or m.max(initial=0) > 1:
        raise InvalidInputError(f"{name} values must lie in [0, 1]")
    return m


def binarize(m, threshold=0.5):
    return (np.asarray(m) > threshold).astype(DTYPE)


def elementwise_mul(a, b):
    """Multiply a frame or mask by a mask, pixel by pixel.

    The mask is broadcast over channels when ``a`` is a frame.
    """
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if b.ndim != 2:
        raise InvalidInputError(f"second operand must be a mask, got shape {b.shape}")
    if a.shape[:2] != b.shape:
        raise InvalidInputError(f"dimension mismatch: {a.shape[:2]} vs {b.shape}")
    if a.ndim == 3:
        return a * b[..., None]
    if a.ndim == 2:
        return a * b
    raise InvalidInputError(f"unsupported operand shape {a.shape}")


def luma(f):
    """Luma channel of an RGB frame, shape ``(H, W)``."""
    f = np.asarray(f, dtype=DTYPE)
    return f @ LUMA_WEIGHTS


@dataclass(frozen=True)
class PadRecord:
    """Pixels of edge padding added on each side of a frame."""

    top: int = 0
    bottom: int = 0
    left: int = 0
    right: int = 0

    def __post_init__(self):
        if min(self.top, self.bottom, self.left, self.right) < 0:
            raise InvalidInputError("padding must be nonnegative")

    def as_tuple(self):
        return (self.top, self.bottom, self.left, self.right)

    @property
    def is_zero(self):
        return not any(self.as_tuple())


def pad_to_multiple(f, m, mask=None):
    """Pad ``f`` (and ``mask``) at the bottom/right up to multiples of ``m``.

    Frame padding replicates the nearest edge pixel; padded mask pixels are
    0 so the border never counts as hole.  Returns ``(frame, mask, record)``;
    ``mask`` is ``None`` in the output when none was given.
    """
    if int(m) != m or m < 1:
        raise InvalidInputError(f"padding multiple must be a positive integer, got {m}")
    f = as_frame(f)
    h, w = f.shape[:2]
    ph = (-h) % m
    pw = (-w) % m
    record = PadRecord(0, ph, 0, pw)
    if ph or pw:
        f = np.pad(f, ((0, ph), (0, pw), (0, 0)), mode="edge")
    if mask is not None:
        mask = as_mask(mask, (h, w))
        if ph or pw:
            mask = np.pad(mask, ((0, ph), (0, pw)), mode="constant")
    return f, mask, record


def unpad(a, record):
    """Strip the padding described by ``record`` from a frame or mask."""
    h, w = a.shape[:2]
    return a[record.top:h - record.bottom, record.left:w - record.right]


def to_uint8(f):
    """Quantize a [0, 1] array to 8-bit (round half to even)."""
    return np.clip(np.rint(np.asarray(f, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(a):
    return np.asarray(a, dtype=DTYPE) / DTYPE(255.0)
