"""Image quality metrics."""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import ndimage

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def psnr(x, y, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    x, y = _pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


@lru_cache(maxsize=None)
def _window():
    r = SSIM_WINDOW // 2
    t = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-0.5 * (t / SSIM_SIGMA) ** 2)
    return g / g.sum()


def _filter_valid(img):
    g = _window()
    r = SSIM_WINDOW // 2
    out = ndimage.correlate1d(ndimage.correlate1d(img, g, axis=0), g, axis=1)
    return out[r:-r, r:-r]


def ssim_map(x, y, peak=1.0):
    x, y = _pair(x, y)
    if x.ndim != 2 or min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs 2D images of at least {SSIM_WINDOW} pixels per axis")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mx, my = _filter_valid(x), _filter_valid(y)
    sxx = _filter_valid(x * x) - mx * mx
    syy = _filter_valid(y * y) - my * my
    sxy = _filter_valid(x * y) - mx * my
    num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim(x, y, peak=1.0):
    """Mean structural similarity over 11x11 Gaussian windows (sigma 1.5) inside the image."""
    return float(ssim_map(x, y, peak).mean())
