"""Procedural CT-like phantoms: soft-edged ellipses over a smooth background plus fine texture."""
from __future__ import annotations

import numpy as np


def smooth_noise(shape, sigma_px: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian-filtered white noise (FFT domain), rescaled to unit std."""
    z = rng.standard_normal(shape)
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.fftfreq(shape[1])[None, :]
    k = np.exp(-2 * (np.pi * sigma_px) ** 2 * (fx**2 + fy**2))
    out = np.real(np.fft.ifft2(np.fft.fft2(z) * k))
    return out / (out.std() + 1e-12)


def phantom(size: int = 64, rng=None, n_ellipses=(3, 8), texture: float = 0.04) -> np.ndarray:
    rng = np.random.default_rng(rng)
    yy, xx = np.mgrid[-1:1:size * 1j, -1:1:size * 1j]
    img = np.full((size, size), rng.uniform(0.1, 0.25))
    for _ in range(rng.integers(n_ellipses[0], n_ellipses[1] + 1)):
        cy, cx = rng.uniform(-0.7, 0.7, 2)
        ay, ax = rng.uniform(0.08, 0.6, 2)
        t = rng.uniform(0, np.pi)
        u = (xx - cx) * np.cos(t) + (yy - cy) * np.sin(t)
        v = -(xx - cx) * np.sin(t) + (yy - cy) * np.cos(t)
        r = np.sqrt((u / ax) ** 2 + (v / ay) ** 2)
        edge = rng.uniform(0.01, 0.05)
        img += rng.uniform(-0.25, 0.45) / (1 + np.exp(np.clip((r - 1) / edge, -60, 60)))
    img += texture * smooth_noise((size, size), rng.uniform(0.6, 1.5), rng)
    return np.clip(img, 0.0, 1.0)


def phantom_corpus(n: int, size: int = 64, seed: int = 0, **kw) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.stack([phantom(size, rng, **kw) for _ in range(n)])
