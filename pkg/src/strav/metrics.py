"""L1, PSNR and SSIM on [0, 1] images.

SSIM follows the usual single-scale recipe on luma: 11x11 Gaussian window
with sigma 1.5, ``C1 = 0.01**2``, ``C2 = 0.03**2``, population statistics,
averaged over window positions that fit entirely inside the image.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import LUMA_WEIGHTS, InvalidInputError

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def l1(a, b):
    a, b = _pair(a, b)
    return float(np.abs(a - b).mean())


def psnr(a, b):
    """Peak signal-to-noise ratio in dB, capped at 99 for identical inputs."""
    a, b = _pair(a, b)
    mse = float(((a - b) ** 2).mean())
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _luma64(a):
    if a.ndim == 3:
        return a @ LUMA_WEIGHTS.astype(np.float64)
    return a


def _gaussian(size, sigma):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def ssim_map(a, b, valid=True):
    """Per-window SSIM of the luma of ``a`` and ``b``.

    With ``valid=True`` only windows fully inside the image are kept (the map
    is smaller than the image by ``window - 1``); otherwise the image is
    reflect-padded and the map has the image's size.  The window shrinks to
    the largest odd size that fits for images smaller than 11 pixels.
    """
    a, b = _pair(a, b)
    x, y = _luma64(a), _luma64(b)
    size = min(SSIM_WINDOW, min(x.shape) - (1 - min(x.shape) % 2))
    if size < 1:
        raise InvalidInputError("image too small for SSIM")
    g = _gaussian(size, SSIM_SIGMA)

    def filt(img):
        out = ndimage.correlate1d(img, g, axis=0, mode="reflect")
        return ndimage.correlate1d(out, g, axis=1, mode="reflect")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    smap = ((2 * mx * my + C1) * (2 * sxy + C2)) / ((mx * mx + my * my + C1) * (sxx + syy + C2))
    if valid:
        pad = (size - 1) // 2
        h, w = smap.shape
        smap = smap[pad:h - pad, pad:w - pad]
    return smap


def ssim(a, b):
    return float(ssim_map(a, b).mean())


@dataclass
class MetricReport:
    l1: float
    psnr: float
    ssim: float
    per_frame: list = field(default_factory=list)

    def as_row(self):
        return (self.l1, self.psnr, self.ssim)


def region_metrics(a, b, region):
    """L1, PSNR and SSIM restricted to the pixels where ``region`` is set.

    SSIM averages the window map over window centres inside the region,
    falling back to the reflect-padded map when no full window is centred
    inside it.
    """
    a, b = _pair(a, b)
    sel = np.asarray(region) > 0.5
    if sel.shape != a.shape[:2]:
        raise InvalidInputError("region does not match image dimensions")
    if not sel.any():
        raise InvalidInputError("region is empty")
    da = a[sel]
    db = b[sel]
    err = da - db
    mse = float((err ** 2).mean())
    p = PSNR_CAP if mse == 0 else min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))
    smap = ssim_map(a, b, valid=True)
    size = a.shape[0] - smap.shape[0] + 1
    pad = (size - 1) // 2
    centres = sel[pad:pad + smap.shape[0], pad:pad + smap.shape[1]]
    if centres.any():
        s = float(smap[centres].mean())
    else:
        s = float(ssim_map(a, b, valid=False)[sel].mean())
    return MetricReport(l1=float(np.abs(err).mean()), psnr=p, ssim=s)


def sequence_report(outputs, truths, regions=None):
    """Per-frame metrics plus their means."""
    rows = []
    for i, (a, b) in enumerate(zip(outputs, truths)):
        if regions is None:
            rows.append(MetricReport(l1(a, b), psnr(a, b), ssim(a, b)))
        else:
            rows.append(region_metrics(a, b, regions[i]))
    if not rows:
        raise InvalidInputError("no frames to evaluate")
    mean = [float(np.mean([r.as_row()[k] for r in rows])) for k in range(3)]
    return MetricReport(*mean, per_frame=rows)


def write_csv(report, path, names=None):
    """``frame,l1,psnr,ssim`` rows with six decimals and a final ``mean`` row."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["frame", "l1", "psnr", "ssim"])
        for i, r in enumerate(report.per_frame):
            name = names[i] if names else str(i)
            wr.writerow([name] + [f"{v:.6f}" for v in r.as_row()])
        wr.writerow(["mean"] + [f"{v:.6f}" for v in report.as_row()])
