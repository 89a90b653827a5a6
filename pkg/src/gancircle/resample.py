"""Separable x2 resampling kernels shared by the data pipeline, the bicubic
skip inside G, and the interpolation baselines.

Every method is realised as a pair of 1D interpolation matrices, so the numpy
path (data, baselines) and the torch path (network skip connection) apply the
same weights. Sample positions follow the half-pixel convention
``src = (dst + 0.5) / 2 - 0.5``; taps falling outside the image are clamped to
the border pixel.
"""
from __future__ import annotations

import functools
import math

import numpy as np
import torch

METHODS = ("nearest", "bilinear", "bicubic", "lanczos")

LANCZOS_A = 3
CUBIC_A = -0.5


def _cubic(t: float) -> float:
    t = abs(t)
    a = CUBIC_A
    if t <= 1.0:
        return (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0
    if t < 2.0:
        return a * t**3 - 5.0 * a * t**2 + 8.0 * a * t - 4.0 * a
    return 0.0


def _linear(t: float) -> float:
    return max(0.0, 1.0 - abs(t))


def _sinc(t: float) -> float:
    if t == 0.0:
        return 1.0
    return math.sin(math.pi * t) / (math.pi * t)


def _lanczos(t: float) -> float:
    if abs(t) >= LANCZOS_A:
        return 0.0
    return _sinc(t) * _sinc(t / LANCZOS_A)


_KERNELS = {
    "bilinear": (_linear, 1),
    "bicubic": (_cubic, 2),
    "lanczos": (_lanczos, LANCZOS_A),
}


def check_method(method: str) -> None:
    if method not in METHODS:
        raise ValueError(f"unknown interpolation method {method!r}; expected one of {METHODS}")


@functools.lru_cache(maxsize=256)
def _matrix(n: int, method: str, scale: int) -> np.ndarray:
    check_method(method)
    out = np.zeros((n * scale, n), dtype=np.float64)
    if method == "nearest":
        for i in range(n * scale):
            out[i, i // scale] = 1.0
        return out
    kernel, support = _KERNELS[method]
    for i in range(n * scale):
        src = (i + 0.5) / scale - 0.5
        base = math.floor(src)
        for j in range(base - support + 1, base + support + 1):
            w = kernel(src - j)
            if w != 0.0:
                out[i, min(max(j, 0), n - 1)] += w
        out[i] /= out[i].sum()
    return out


def interpolation_matrix(n: int, method: str, scale: int = 2) -> np.ndarray:
    """(scale*n, n) matrix mapping a length-n signal to its upsampled version."""
    if n < 1:
        raise ValueError(f"signal length must be positive, got {n}")
    return _matrix(int(n), method, int(scale)).copy()


def upsample2(image: np.ndarray, method: str = "bicubic") -> np.ndarray:
    """Upsample a 2D array by 2 along both axes."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {image.shape}")
    rows = _matrix(image.shape[0], method, 2)
    cols = _matrix(image.shape[1], method, 2)
    return rows @ image @ cols.T


def upsample2_torch(batch: torch.Tensor, method: str = "bicubic") -> torch.Tensor:
    """Differentiable x2 upsampling of an (N, C, H, W) tensor."""
    h, w = batch.shape[-2:]
    rows = torch.from_numpy(_matrix(h, method, 2)).to(batch.dtype)
    cols = torch.from_numpy(_matrix(w, method, 2)).to(batch.dtype)
    return rows @ batch @ cols.T
