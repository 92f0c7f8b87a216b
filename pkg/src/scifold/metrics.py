"""Reconstruction quality metrics for [0,1]-normalized spectral cubes.

PSNR is computed from the whole-cube mean squared error (per-band values are
also reported so either convention is available). SSIM follows the usual
11x11 Gaussian-window convention (sigma 1.5, k1 0.01, k2 0.03, unit dynamic
range), evaluated on valid windows per band and averaged across bands.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UsageError
from .sensing import SpectralCube


def _check_pair(x, ref):
    if x.data.shape != ref.data.shape:
        raise DimensionError(
            f"metrics: cube axes {x.data.shape} vs reference {ref.data.shape}"
        )


def psnr(x: SpectralCube, ref: SpectralCube) -> float:
    """Whole-cube peak signal-to-noise ratio in dB; +inf for identical cubes."""
    _check_pair(x, ref)
    mse = float(np.mean((x.data.astype(np.float64) - ref.data) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def psnr_per_band(x: SpectralCube, ref: SpectralCube) -> np.ndarray:
    _check_pair(x, ref)
    diff = x.data.astype(np.float64) - ref.data
    mse = (diff * diff).mean(axis=(0, 1))
    with np.errstate(divide="ignore"):
        return np.where(mse == 0.0, np.inf, 10.0 * np.log10(1.0 / np.maximum(mse, 1e-300)))


def _gaussian_window(size, sigma):
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _ssim_band(a, b, window, sigma, k1, k2, data_range):
    kernel = _gaussian_window(window, sigma)
    wa = np.lib.stride_tricks.sliding_window_view(a, (window, window))
    wb = np.lib.stride_tricks.sliding_window_view(b, (window, window))
    mu_a = np.einsum("hwij,ij->hw", wa, kernel, optimize=True)
    mu_b = np.einsum("hwij,ij->hw", wb, kernel, optimize=True)
    e_aa = np.einsum("hwij,ij->hw", wa * wa, kernel, optimize=True)
    e_bb = np.einsum("hwij,ij->hw", wb * wb, kernel, optimize=True)
    e_ab = np.einsum("hwij,ij->hw", wa * wb, kernel, optimize=True)
    var_a = e_aa - mu_a**2
    var_b = e_bb - mu_b**2
    cov = e_ab - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(ssim_map.mean())


def ssim_per_band(x: SpectralCube, ref: SpectralCube, window=11, sigma=1.5,
                  k1=0.01, k2=0.03, data_range=1.0) -> np.ndarray:
    _check_pair(x, ref)
    nx, ny, nb = x.data.shape
    if nx < window or ny < window:
        raise UsageError(
            f"ssim: spatial dims {nx}x{ny} smaller than window {window}"
        )
    a = x.data.astype(np.float64)
    b = ref.data.astype(np.float64)
    return np.array([
        _ssim_band(a[:, :, m], b[:, :, m], window, sigma, k1, k2, data_range)
        for m in range(nb)
    ])


def ssim(x: SpectralCube, ref: SpectralCube, window=11, sigma=1.5,
         k1=0.01, k2=0.03, data_range=1.0) -> float:
    """Band-averaged structural similarity on Gaussian-weighted local windows."""
    return float(ssim_per_band(x, ref, window, sigma, k1, k2, data_range).mean())


@dataclass
class QualityReport:
    psnr_db: float
    ssim: float
    psnr_per_band: np.ndarray
    ssim_per_band: np.ndarray


def quality_report(x: SpectralCube, ref: SpectralCube) -> QualityReport:
    per_band_psnr = psnr_per_band(x, ref)
    per_band_ssim = ssim_per_band(x, ref)
    return QualityReport(
        psnr_db=psnr(x, ref),
        ssim=float(per_band_ssim.mean()),
        psnr_per_band=per_band_psnr,
        ssim_per_band=per_band_ssim,
    )
