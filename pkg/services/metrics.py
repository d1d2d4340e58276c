# File: services/metrics.py
import math
from typing import Union

import numpy as np
from scipy.ndimage import correlate1d

from schemas.scene_schema import Image

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
PSNR_CAP = 100.0
DEFAULT_LAMBDA_DSSIM = 0.2

ImageLike = Union[Image, np.ndarray]


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1D Gaussian; the 2D window is its outer product."""
    x = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _pixels(image: ImageLike) -> np.ndarray:
    return image.pixels if isinstance(image, Image) else np.asarray(image, dtype=np.float64)


def _blur(channel_stack: np.ndarray, window: np.ndarray) -> np.ndarray:
    # REPLICATE PADDING ON BOTH SPATIAL AXES
    out = correlate1d(channel_stack, window, axis=0, mode="nearest")
    return correlate1d(out, window, axis=1, mode="nearest")


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    window = gaussian_window()
    mu_a, mu_b = _blur(a, window), _blur(b, window)
    var_a = _blur(a * a, window) - mu_a**2
    var_b = _blur(b * b, window) - mu_b**2
    cov = _blur(a * b, window) - mu_a * mu_b
    numerator = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    denominator = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return numerator / denominator


def ssim(a: ImageLike, b: ImageLike) -> float:
    """Mean SSIM over pixels and channels with an 11x11 Gaussian window (sigma 1.5)."""
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"image shapes differ: {pa.shape} vs {pb.shape}")
    return float(ssim_map(pa, pb).mean())


def psnr(a: ImageLike, b: ImageLike) -> float:
    """PSNR in dB for a [0, 1] range, capped at 100 for identical images."""
    pa, pb = _pixels(a), _pixels(b)
    if pa.shape != pb.shape:
        raise ValueError(f"image shapes differ: {pa.shape} vs {pb.shape}")
    mse = float(np.mean((pa - pb) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def rendering_loss(pred: ImageLike, gt: ImageLike, lambda_dssim: float = DEFAULT_LAMBDA_DSSIM) -> float:
    """(1 - lambda) L1 + lambda (1 - SSIM) / 2."""
    pa, pb = _pixels(pred), _pixels(gt)
    l1 = float(np.mean(np.abs(pa - pb)))
    return (1.0 - lambda_dssim) * l1 + lambda_dssim * (1.0 - ssim(pa, pb)) / 2.0
