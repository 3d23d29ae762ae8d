"""Image and normal-map quality metrics.

PSNR over sRGB values in [0, 1] (identical images report +inf). SSIM uses
an 11x11 Gaussian window (sigma 1.5) with the standard constants
k1=0.01, k2=0.03 on a unit dynamic range, averaged over channels. Normal
MAE is the mean angular error in degrees over a mask.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

__all__ = ["metric_psnr", "metric_ssim", "metric_mae", "psnr_from_mse"]


def psnr_from_mse(mse: float) -> float:
    if mse <= 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def metric_psnr(img_a: np.ndarray, img_b: np.ndarray,
                mask: np.ndarray | None = None) -> float:
    """10 log10(1 / MSE) over sRGB in [0,1]; +inf for identical inputs."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if mask is not None:
        a = a[mask]
        b = b[mask]
    return psnr_from_mse(float(np.mean((a - b) ** 2)))


def _ssim_channel(a: np.ndarray, b: np.ndarray, sigma: float, truncate: float,
                  k1: float, k2: float) -> float:
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    blur = lambda x: gaussian_filter(x, sigma=sigma, truncate=truncate, mode="reflect")
    mu_a = blur(a)
    mu_b = blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def metric_ssim(img_a: np.ndarray, img_b: np.ndarray) -> float:
    """Gaussian-window SSIM, mean over channels; 1.0 for identical images.

    sigma=1.5 with truncate=3.5 gives the standard 11x11 support.
    """
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    vals = [_ssim_channel(a[..., c], b[..., c], sigma=1.5, truncate=3.5,
                          k1=0.01, k2=0.03) for c in range(a.shape[-1])]
    return float(np.mean(vals))


def metric_mae(normals_a: np.ndarray, normals_b: np.ndarray,
               mask: np.ndarray) -> float:
    """Mean angular error in degrees between unit normal maps over a mask."""
    a = np.asarray(normals_a, dtype=np.float64)[mask]
    b = np.asarray(normals_b, dtype=np.float64)[mask]
    if a.size == 0:
        return 0.0
    a = a / np.maximum(np.linalg.norm(a, axis=-1, keepdims=True), 1e-12)
    b = b / np.maximum(np.linalg.norm(b, axis=-1, keepdims=True), 1e-12)
    dots = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    return float(np.degrees(np.arccos(dots)).mean())
