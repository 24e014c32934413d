"""Frame-directory I/O: 8-bit RGB PNG frames and 8-bit grayscale masks (255 = hole)."""
from __future__ import annotations

import os
import re

import numpy as np
from PIL import Image

from .core import DTYPE, InvalidInputError, as_frame, from_uint8, to_uint8

IMAGE_EXTS = (".png", ".bmp", ".tif", ".tiff", ".ppm", ".pgm")

_num = re.compile(r"(\d+)")


def _sort_key(name):
    # numeric runs compare as numbers so frame_2 sorts before frame_10
    return [int(p) if p.isdigit() else p for p in _num.split(name)]


def list_images(directory):
    """Sorted image file names (not paths) in ``directory``."""
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"not a directory: {directory}")
    names = [n for n in os.listdir(directory) if n.lower().endswith(IMAGE_EXTS)]
    return sorted(names, key=_sort_key)


def read_frame(path):
    with Image.open(path) as im:
        a = np.asarray(im.convert("RGB"))
    return from_uint8(a)


def read_mask(path):
    """Binary float mask: 1 where the stored gray value is above 127."""
    with Image.open(path) as im:
        a = np.asarray(im.convert("L"))
    return (a > 127).astype(DTYPE)


def write_frame(path, frame):
    Image.fromarray(to_uint8(as_frame(frame))).save(path)


def write_gray(path, m):
    """Write a [0, 1] map as an 8-bit grayscale image."""
    Image.fromarray(to_uint8(np.clip(np.asarray(m, np.float64), 0, 1))).save(path)


def write_mask(path, m):
    Image.fromarray(np.where(np.asarray(m) > 0.5, 255, 0).astype(np.uint8)).save(path)


def matched_names(frames_dir, masks_dir):
    """Frame names, checking that the mask directory holds exactly the same set."""
    frames = list_images(frames_dir)
    masks = list_images(masks_dir)
    if not frames:
        raise InvalidInputError(f"no frames found in {frames_dir}")
    if set(frames) != set(masks):
        missing = sorted(set(frames) ^ set(masks), key=_sort_key)[:5]
        raise InvalidInputError(f"frame and mask names differ (e.g. {missing})")
    return frames


def write_sequence(directory, frames, names=None, writer=write_frame):
    os.makedirs(directory, exist_ok=True)
    names = names or frame_names(len(frames))
    for name, f in zip(names, frames):
        writer(os.path.join(directory, name), f)
    return names


def frame_names(n, ext=".png"):
    width = max(5, len(str(n - 1)))
    return [f"{i:0{width}d}{ext}" for i in range(n)]
