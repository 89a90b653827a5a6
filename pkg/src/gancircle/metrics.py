"""PSNR, SSIM and IFC, interpolation baselines, and per-method reports."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .pyramid import build_pyramid
from .resample import METHODS, upsample2

PSNR_CAP = 100.0
IFC_SCALES = 3
IFC_ORIENTATIONS = 4
IFC_BLOCK = 3
_TOL = 1e-10


def _pair(ref, test):
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch: reference {ref.shape} vs test {test.shape}")
    return ref, test


def psnr(ref, test, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; identical images report ``PSNR_CAP``."""
    ref, test = _pair(ref, test)
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak**2 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img, w):
    n = len(w)
    rows = np.lib.stride_tricks.sliding_window_view(img, n, axis=1) @ w
    return np.lib.stride_tricks.sliding_window_view(rows, n, axis=0) @ w


def ssim(ref, test, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean SSIM over all fully-contained Gaussian windows."""
    ref, test = _pair(ref, test)
    if min(ref.shape) < window:
        raise ValueError(f"image {ref.shape} is smaller than the {window}x{window} SSIM window")
    w = gaussian_window(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mx, my = _filter_valid(ref, w), _filter_valid(test, w)
    sxx = _filter_valid(ref * ref, w) - mx * mx
    syy = _filter_valid(test * test, w) - my * my
    sxy = _filter_valid(ref * test, w) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def _blocks(a, m):
    h, w = a.shape
    return a.reshape(h // m, m, w // m, m).transpose(0, 2, 1, 3).reshape(-1, m * m)


def _subband_information(c, d, m=IFC_BLOCK):
    h, w = (c.shape[0] // m) * m, (c.shape[1] // m) * m
    c, d = c[:h, :w], d[:h, :w]
    # GSM covariance from every m x m neighbourhood of the reference
    nb = np.lib.stride_tricks.sliding_window_view(c, (m, m)).reshape(-1, m * m)
    nb = nb - nb.mean(axis=0)
    cov = nb.T @ nb / nb.shape[0]
    lam = np.clip(np.linalg.eigvalsh(cov), 0.0, None)
    vc, vd = _blocks(c, m), _blocks(d, m)
    s2 = np.einsum("bi,ij,bj->b", vc, np.linalg.pinv(cov), vc) / (m * m)
    # gain + additive noise channel per block
    cc = vc - vc.mean(axis=1, keepdims=True)
    dd = vd - vd.mean(axis=1, keepdims=True)
    var_c = np.mean(cc * cc, axis=1)
    var_d = np.mean(dd * dd, axis=1)
    cov_cd = np.mean(cc * dd, axis=1)
    g = cov_cd / (var_c + _TOL)
    sv = var_d - g * cov_cd
    flat = var_c < _TOL
    g[flat], sv[flat] = 0.0, var_d[flat]
    neg = g < 0
    g[neg], sv[neg] = 0.0, var_d[neg]
    sv = np.maximum(sv, _TOL)
    snr = (g * g * s2)[:, None] * lam[None, :] / sv[:, None]
    return float(0.5 * np.sum(np.log2(1.0 + snr)))


def ifc(ref, test, n_scales: int = IFC_SCALES, n_orientations: int = IFC_ORIENTATIONS) -> float:
    """Information fidelity criterion summed over steerable-pyramid subbands.

    Images are cropped to a multiple of ``2**n_scales``; the coarsest band
    must still hold at least two 3x3 blocks per axis.
    """
    ref, test = _pair(ref, test)
    d = 2**n_scales
    h, w = (ref.shape[0] // d) * d, (ref.shape[1] // d) * d
    if min(h, w) // 2 ** (n_scales - 1) < 2 * IFC_BLOCK:
        raise ValueError(f"image {ref.shape} is too small for a {n_scales}-scale pyramid")
    ref, test = ref[:h, :w], test[:h, :w]
    pr = build_pyramid(ref, n_scales, n_orientations)
    pt = build_pyramid(test, n_scales, n_orientations)
    total = 0.0
    for level_r, level_t in zip(pr, pt):
        for c, dd in zip(level_r, level_t):
            total += _subband_information(c, dd)
    return total


def baseline_upsample(lr, method: str) -> np.ndarray:
    if method not in METHODS:
        raise ValueError(f"unknown interpolation method {method!r}; expected one of {METHODS}")
    return upsample2(lr, method)


@dataclass
class MetricRow:
    image_id: str
    psnr_db: float = float("nan")
    ssim: float = float("nan")
    ifc: float = float("nan")
    error: Optional[str] = None


@dataclass
class MetricReport:
    method: str
    rows: list = field(default_factory=list)

    @property
    def valid_rows(self):
        return [r for r in self.rows if r.error is None]

    @property
    def errors(self):
        return [r for r in self.rows if r.error is not None]

    def aggregate(self) -> dict:
        """Mean and population std of each metric over the rows without errors."""
        out = {}
        for key in ("psnr_db", "ssim", "ifc"):
            vals = np.array([getattr(r, key) for r in self.valid_rows], dtype=np.float64)
            out[key] = (float(vals.mean()), float(vals.std())) if vals.size else (float("nan"), float("nan"))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image_id", "method", "psnr_db", "ssim", "ifc"])
        for r in self.valid_rows:
            w.writerow([r.image_id, self.method, repr(r.psnr_db), repr(r.ssim), repr(r.ifc)])
        return buf.getvalue()


def score(ref, test, peak: float = 1.0) -> tuple:
    return psnr(ref, test, peak), ssim(ref, test), ifc(ref, test)


def evaluate(references: dict, outputs: dict, method: str, peak: float = 1.0) -> MetricReport:
    """Score ``outputs[id]`` against ``references[id]`` for every reference id.

    Missing or mis-shaped outputs become error rows; the rest of the batch is
    still scored.
    """
    report = MetricReport(method)
    for image_id in sorted(references):
        ref = references[image_id]
        if image_id not in outputs:
            report.rows.append(MetricRow(image_id, error="missing output"))
            continue
        test = outputs[image_id]
        try:
            p, s, f = score(ref, test, peak)
        except ValueError as exc:
            report.rows.append(MetricRow(image_id, error=str(exc)))
            continue
        report.rows.append(MetricRow(image_id, p, s, f))
    return report


def evaluate_baselines(references: dict, lr_images: dict, methods=METHODS, peak: float = 1.0) -> list:
    reports = []
    for m in methods:
        ups = {k: baseline_upsample(v, m) for k, v in lr_images.items()}
        reports.append(evaluate(references, ups, m, peak))
    return reports


def summary_table(reports: list) -> str:
    head = f"{'method':<16}{'PSNR (dB)':>20}{'SSIM':>20}{'IFC':>20}{'n':>6}"
    lines = [head, "-" * len(head)]
    for r in reports:
        agg = r.aggregate()
        cells = "".join(f"{agg[k][0]:>11.3f} ± {agg[k][1]:<6.3f}" for k in ("psnr_db", "ssim", "ifc"))
        lines.append(f"{r.method:<16}{cells}{len(r.valid_rows):>6}")
    return "\n".join(lines)


def summary_csv(reports: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "n", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std", "ifc_mean", "ifc_std", "errors"])
    for r in reports:
        a = r.aggregate()
        w.writerow([r.method, len(r.valid_rows), *(repr(v) for k in ("psnr_db", "ssim", "ifc") for v in a[k]),
                    len(r.errors)])
    return buf.getvalue()
