"""Real steerable pyramid built in the Fourier domain.

Radial masks are raised-cosine pairs on a log2 frequency axis with
``high**2 + low**2 == 1``; angular masks are ``cos(theta - theta_k)**order``
with ``order = n_orientations - 1``. Each scale halves the spectrum by
cropping its central half, so band ``s`` has shape ``(h / 2**s, w / 2**s)``.
"""
from __future__ import annotations

import math

import numpy as np


def _high(log_r, edge):
    t = np.clip(log_r - (edge - 1.0), 0.0, 1.0)
    return np.cos(0.5 * np.pi * (1.0 - t))


def _low(log_r, edge):
    t = np.clip(log_r - (edge - 1.0), 0.0, 1.0)
    return np.cos(0.5 * np.pi * t)


def _polar_grid(h, w):
    fy = (np.arange(h) - h // 2) / (h / 2)
    fx = (np.arange(w) - w // 2) / (w / 2)
    yy, xx = np.meshgrid(fy, fx, indexing="ij")
    r = np.hypot(xx, yy)
    r[h // 2, w // 2] = r[h // 2, w // 2 - 1] / 2 if w > 1 else 1.0
    return np.log2(r), np.arctan2(yy, xx)


def _crop_half(a):
    h, w = a.shape
    return a[h // 2 - h // 4:h // 2 - h // 4 + h // 2, w // 2 - w // 4:w // 2 - w // 4 + w // 2]


def build_pyramid(image, n_scales: int = 3, n_orientations: int = 4) -> list:
    """Oriented bandpass subbands, ordered ``[scale][orientation]``.

    The highpass and lowpass residuals are not returned. Image dimensions
    must be divisible by ``2**n_scales``.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    d = 2**n_scales
    if h % d or w % d:
        raise ValueError(f"image shape {img.shape} must be divisible by {d} for {n_scales} scales")
    order = n_orientations - 1
    const = math.sqrt(
        (2.0 ** (2 * order)) * math.factorial(order) ** 2
        / (n_orientations * math.factorial(2 * order))
    )
    log_r, angle = _polar_grid(h, w)
    spec = np.fft.fftshift(np.fft.fft2(img))
    lo = spec * _low(log_r, 0.0)
    bands = []
    phase = (-1j) ** order
    for s in range(n_scales):
        edge = -1.0 - s
        hi_mask = _high(log_r, edge)
        level = []
        for k in range(n_orientations):
            theta = np.pi * k / n_orientations
            ang = const * np.cos(angle - theta) ** order
            band = np.fft.ifft2(np.fft.ifftshift(phase * lo * hi_mask * ang))
            level.append(band.real)
        bands.append(level)
        lo = _crop_half(lo * _low(log_r, edge))
        log_r, angle = _crop_half(log_r), _crop_half(angle)
    return bands
