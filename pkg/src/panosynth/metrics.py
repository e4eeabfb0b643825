"""
Image comparison metrics and column-profile analysis of panoramas.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import gaussian_filter1d
from scipy.signal import find_peaks

from .errors import MetricError

logger = logging.getLogger(__name__)

SSIM_WINDOW = 8
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _check_pair(x: np.ndarray, y: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise MetricError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if x.ndim != 2:
        raise MetricError(f"images must be 2-D, got {x.ndim}-D")
    return x, y


def ssim(x: np.ndarray, y: np.ndarray, window: int = SSIM_WINDOW) -> float:
    """Mean structural similarity over all window x window patches of [0, 1] images"""
    x, y = _check_pair(x, y)
    if min(x.shape) < window:
        raise MetricError(f"images smaller than the {window}x{window} SSIM window: {x.shape}")

    px = sliding_window_view(x, (window, window))
    py = sliding_window_view(y, (window, window))
    mu_x = px.mean(axis=(-2, -1))
    mu_y = py.mean(axis=(-2, -1))
    var_x = (px * px).mean(axis=(-2, -1)) - mu_x * mu_x
    var_y = (py * py).mean(axis=(-2, -1)) - mu_y * mu_y
    cov = (px * py).mean(axis=(-2, -1)) - mu_x * mu_y

    numerator = (2.0 * (mu_x * mu_y) + SSIM_C1) * (2.0 * cov + SSIM_C2)
    denominator = (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(numerator / denominator))


def psnr(x: np.ndarray, y: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for a peak of 1; inf for identical images"""
    x, y = _check_pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


@dataclass(frozen=True)
class MetricReport:
    ssim: float
    psnr: float
    width: int
    height: int

    def to_key_values(self) -> Dict[str, str]:
        return {
            "ssim": f"{self.ssim:.6f}",
            "psnr": "inf" if math.isinf(self.psnr) else f"{self.psnr:.4f}",
            "width": str(self.width),
            "height": str(self.height),
        }


def compare_images(x: np.ndarray, y: np.ndarray) -> MetricReport:
    x, y = _check_pair(x, y)
    return MetricReport(ssim=ssim(x, y), psnr=psnr(x, y), width=x.shape[1], height=x.shape[0])


def column_profile(pixels: np.ndarray) -> np.ndarray:
    """Mean brightness of every panorama column"""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[0] == 0:
        raise MetricError(f"expected a non-empty 2-D panorama, got shape {pixels.shape}")
    return pixels.mean(axis=0)


def profile_peaks(
    profile: np.ndarray,
    smoothing: float = 1.5,
    prominence_fraction: float = 0.3,
    min_distance: int = 3,
) -> np.ndarray:
    """Column indices of the tooth-like maxima of a column profile"""
    profile = np.asarray(profile, dtype=np.float64)
    if profile.ndim != 1 or profile.size < 3:
        raise MetricError("profile must be 1-D with at least 3 columns")

    smooth = gaussian_filter1d(profile, smoothing, mode="nearest") if smoothing > 0 else profile
    spread = float(smooth.max() - np.median(smooth))
    if spread <= 0:
        return np.array([], dtype=int)

    peaks, _ = find_peaks(smooth, prominence=prominence_fraction * spread, distance=min_distance)
    logger.debug(f"Found {len(peaks)} profile peaks")
    return peaks
