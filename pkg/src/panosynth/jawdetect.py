"""
Jaw localisation: maximum intensity projections, histogram Gaussian fits,
binary mask cleaning, contour extraction and in-plane tilt handling.
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import cv2
import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares

from .config import SynthesisConfig
from .errors import EmptyMaskError, JawDetectionError

logger = logging.getLogger(__name__)

MipAxis = Literal["axial", "coronal"]

# A histogram run must carry at least this share of the pixels to count as the bulk mode
BULK_MODE_SHARE = 0.25
SQUARE = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class MipImage:
    pixels: np.ndarray
    axis: str
    slice_range: Tuple[int, int]


@dataclass(frozen=True)
class GaussianFit:
    mu: float
    sigma: float
    amplitude: float
    residual: float
    converged: bool = True
    method: str = "least_squares"


@dataclass(frozen=True)
class TiltEstimate:
    angle_deg: float
    confident: bool
    eigen_ratio: float


@dataclass(frozen=True)
class JawGeometry:
    """Closed jaw contour ((x, y) rows), its bounding box and the tilt that was removed"""

    contour: np.ndarray
    bbox: Tuple[float, float, float, float]  # x_min, x_max, y_min, y_max
    tilt_deg: float = 0.0
    roi_z: Tuple[int, int] = (0, 0)

    @classmethod
    def from_contour(cls, contour: np.ndarray, tilt_deg: float = 0.0, roi_z: Tuple[int, int] = (0, 0)):
        return cls(contour=contour, bbox=bounding_box(contour), tilt_deg=tilt_deg, roi_z=roi_z)


def mip(values: np.ndarray, axis: MipAxis, slice_range: Optional[Tuple[int, int]] = None) -> MipImage:
    """Maximum intensity projection of a (nz, ny, nx) array.

    axial projects along z over slice_range (z indices); coronal projects
    along y over slice_range (y indices).
    """
    if axis == "axial":
        array_axis = 0
    elif axis == "coronal":
        array_axis = 1
    else:
        raise JawDetectionError(f"unknown projection axis {axis!r}")

    extent = values.shape[array_axis]
    lo, hi = slice_range if slice_range is not None else (0, extent)
    if not 0 <= lo < hi <= extent:
        raise JawDetectionError(f"empty or out-of-range {axis} slice range {(lo, hi)} for extent {extent}")

    block = values[lo:hi] if array_axis == 0 else values[:, lo:hi, :]
    return MipImage(pixels=block.max(axis=array_axis), axis=axis, slice_range=(int(lo), int(hi)))


def histogram(pixels: np.ndarray, bins: int = SynthesisConfig.HISTOGRAM_BINS) -> Tuple[np.ndarray, np.ndarray]:
    """Bin centres and counts of the nonzero pixels over [0, 1]"""
    values = np.asarray(pixels, dtype=np.float64)
    counts, edges = np.histogram(values[values > 0], bins=bins, range=(0.0, 1.0))
    return 0.5 * (edges[:-1] + edges[1:]), counts.astype(np.float64)


def _gaussian(params: np.ndarray, x: np.ndarray) -> np.ndarray:
    amplitude, mu, sigma = params
    return amplitude * np.exp(-0.5 * ((x - mu) / sigma) ** 2)


def _gaussian_jacobian(params: np.ndarray, x: np.ndarray) -> np.ndarray:
    amplitude, mu, sigma = params
    z = (x - mu) / sigma
    g = np.exp(-0.5 * z**2)
    return np.column_stack([g, amplitude * g * z / sigma, amplitude * g * z**2 / sigma])


def _initial_guess(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Log-parabola through the nonzero bins, falling back to moments"""
    nonzero = y > 0
    xs, ys = x[nonzero], y[nonzero]
    try:
        c2, c1, c0 = np.polyfit(xs, np.log(ys), 2, w=np.sqrt(ys))
    except (np.linalg.LinAlgError, ValueError):
        c2 = 0.0
    if c2 < 0:
        sigma = math.sqrt(-1.0 / (2.0 * c2))
        mu = c1 * sigma**2
        amplitude = math.exp(min(c0 + mu**2 / (2.0 * sigma**2), 50.0))
        if np.isfinite([mu, sigma, amplitude]).all():
            return np.array([amplitude, mu, sigma])

    mu = float(np.sum(xs * ys) / np.sum(ys))
    sigma = float(np.sqrt(np.sum((xs - mu) ** 2 * ys) / np.sum(ys))) or 1.0
    return np.array([float(ys.max()), mu, sigma])


def fit_gaussian(
    centers: np.ndarray,
    counts: np.ndarray,
    max_steps: int = SynthesisConfig.FIT_MAX_STEPS,
    tolerance: float = SynthesisConfig.FIT_TOLERANCE,
) -> GaussianFit:
    """Least-squares Gaussian A*exp(-(x-mu)^2/(2 sigma^2)) to a histogram"""
    x = np.asarray(centers, dtype=np.float64)
    y = np.asarray(counts, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise JawDetectionError("histogram centres and counts must be 1-D arrays of equal length")
    if np.count_nonzero(y > 0) < 3:
        raise JawDetectionError("degenerate histogram: fewer than 3 nonzero bins")

    # Work in unit-scaled coordinates to keep the problem well conditioned
    nonzero = y > 0
    offset = float(x[nonzero].mean())
    scale = float(np.ptp(x[nonzero])) or 1.0
    peak = float(y.max())
    xs = (x - offset) / scale
    ys = y / peak

    p0 = _initial_guess(xs, ys)
    result = least_squares(
        lambda p: _gaussian(p, xs) - ys,
        p0,
        jac=lambda p: _gaussian_jacobian(p, xs),
        method="lm",
        xtol=tolerance,
        ftol=1e-15,
        gtol=1e-15,
        max_nfev=max_steps,
    )
    amplitude, mu, sigma = result.x
    converged = bool(result.status > 0)
    if not converged:
        logger.warning(f"Gaussian fit did not converge in {max_steps} steps, using best estimate")

    sigma = abs(sigma) * scale
    if not (sigma > 0 and amplitude > 0 and np.isfinite([amplitude, mu, sigma]).all()):
        raise JawDetectionError(f"Gaussian fit failed: amplitude={amplitude}, sigma={sigma}")

    return GaussianFit(
        mu=float(offset + mu * scale),
        sigma=float(sigma),
        amplitude=float(amplitude * peak),
        residual=float(np.sqrt(np.mean(result.fun**2)) * peak),
        converged=converged,
    )


def _runs(mask: np.ndarray):
    labels, count = ndimage.label(mask)
    return [np.flatnonzero(labels == i) for i in range(1, count + 1)]


def fit_bulk_mode(centers: np.ndarray, counts: np.ndarray) -> GaussianFit:
    """Fit the bulk mode of a multi-modal histogram.

    The bulk mode is the lowest contiguous run of nonzero bins that holds at
    least BULK_MODE_SHARE of all pixels. A run narrower than 3 bins is
    summarised by its moments with sigma of half a bin.
    """
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise EmptyMaskError("histogram is empty: no pixel inside the window")

    runs = _runs(counts > 0)
    chosen = next((r for r in runs if counts[r].sum() >= BULK_MODE_SHARE * total), None)
    if chosen is None:
        chosen = max(runs, key=lambda r: counts[r].sum())

    if len(chosen) >= 3:
        return fit_gaussian(centers[chosen], counts[chosen])

    weights = counts[chosen]
    mu = float(np.sum(centers[chosen] * weights) / weights.sum())
    half_bin = 0.5 * float(centers[1] - centers[0]) if len(centers) > 1 else 0.5
    return GaussianFit(mu=mu, sigma=half_bin, amplitude=float(weights.max()), residual=0.0, method="moments")


def teeth_threshold(fit: GaussianFit) -> float:
    return fit.mu + 2.0 * fit.sigma


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def roi_slices(fit: GaussianFit, nz: int) -> Tuple[int, int]:
    """Half-open slice range [mu - 2.5 sigma, mu + 1.5 sigma) clamped to the volume"""
    lo = min(max(_round_half_up(fit.mu - 2.5 * fit.sigma), 0), nz)
    hi = min(max(_round_half_up(fit.mu + 1.5 * fit.sigma), 0), nz)
    if lo >= hi:
        raise JawDetectionError(f"empty ROI after clamping: ({lo}, {hi}) for {nz} slices")
    return lo, hi


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Largest 8-connected component; ties go to the smaller centroid row"""
    labels, count = ndimage.label(mask, structure=SQUARE)
    if count == 0:
        raise EmptyMaskError("mask is empty after cleaning")
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, count + 1))
    rows = ndimage.center_of_mass(mask, labels, index=np.arange(1, count + 1))
    order = sorted(range(count), key=lambda i: (-sizes[i], rows[i][0]))
    return labels == order[0] + 1


def binarize_and_clean(img: np.ndarray, t: float) -> np.ndarray:
    """Threshold, 3x3 opening then closing, hole filling, largest component"""
    mask = np.asarray(img) >= t
    mask = ndimage.binary_opening(mask, structure=SQUARE)
    mask = ndimage.binary_closing(mask, structure=SQUARE)
    mask = ndimage.binary_fill_holes(mask)
    return largest_component(mask)


def extract_contour(mask: np.ndarray) -> np.ndarray:
    """Closed outer boundary of a single-component mask as (x, y) rows"""
    _, count = ndimage.label(mask, structure=SQUARE)
    if count == 0:
        raise EmptyMaskError("cannot extract a contour from an empty mask")
    if count > 1:
        raise JawDetectionError(f"mask has {count} components, expected one")

    contours, _ = cv2.findContours(mask.astype(np.uint8), cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    boundary = max(contours, key=len).reshape(-1, 2).astype(np.float64)
    return np.vstack([boundary, boundary[:1]])


def bounding_box(contour: np.ndarray) -> Tuple[float, float, float, float]:
    xs, ys = contour[:, 0], contour[:, 1]
    return float(xs.min()), float(xs.max()), float(ys.min()), float(ys.max())


def contour_area(contour: np.ndarray) -> float:
    return abs(float(cv2.contourArea(contour.astype(np.float32))))


def contour_perimeter(contour: np.ndarray) -> float:
    return float(np.sum(np.hypot(*np.diff(contour, axis=0).T)))


def estimate_tilt(contour: np.ndarray, isotropy_ratio: float = SynthesisConfig.TILT_ISOTROPY_RATIO) -> TiltEstimate:
    """Tilt of the jaw axis that points anteriorly, in degrees from the -y axis.

    Positive angles turn the anterior direction towards +x. Near-isotropic
    shapes have no reliable axis and report 0 with confident=False.
    """
    moments = cv2.moments(contour.astype(np.float32))
    if moments["m00"] == 0:
        raise JawDetectionError("degenerate contour: zero area")
    sign = 1.0 if moments["m00"] > 0 else -1.0
    covariance = sign * np.array([[moments["mu20"], moments["mu11"]], [moments["mu11"], moments["mu02"]]])

    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    small, large = max(eigenvalues[0], 0.0), eigenvalues[1]
    ratio = float(large / small) if small > 0 else math.inf
    if ratio < isotropy_ratio:
        return TiltEstimate(angle_deg=0.0, confident=False, eigen_ratio=ratio)

    vx, vy = max(eigenvectors.T, key=lambda v: abs(v[1]))
    if vy > 0:
        vx, vy = -vx, -vy
    if vy == 0:
        return TiltEstimate(angle_deg=90.0, confident=True, eigen_ratio=ratio)
    return TiltEstimate(angle_deg=math.degrees(math.atan2(vx, -vy)), confident=True, eigen_ratio=ratio)


def correct_tilt(
    values: np.ndarray, angle_deg: float, fill_value: float = SynthesisConfig.AIR_LEVEL
) -> np.ndarray:
    """Rotate every axial slice by -angle_deg about the axial centre (bilinear)"""
    if not abs(angle_deg) < SynthesisConfig.MAX_TILT_DEG:
        raise JawDetectionError(
            f"tilt {angle_deg:.3f} deg outside the correctable range of +/-{SynthesisConfig.MAX_TILT_DEG} deg"
        )
    if angle_deg == 0:
        return np.array(values, dtype=np.float64, copy=True)

    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    _, ny, nx = values.shape
    center = np.array([0.0, (ny - 1) / 2.0, (nx - 1) / 2.0])
    # Output (z, y, x) maps to input (z, cy + s*dx + c*dy, cx + c*dx - s*dy)
    matrix = np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])
    offset = center - matrix @ center
    return ndimage.affine_transform(
        np.asarray(values, dtype=np.float64), matrix, offset=offset, order=1, mode="constant", cval=fill_value
    )


def jaw_mask(windowed: np.ndarray, roi_z: Tuple[int, int], threshold: Optional[float] = None):
    """Axial MIP over the ROI, thresholded and cleaned; returns (mip, threshold, mask)"""
    image = mip(windowed, "axial", roi_z)
    if threshold is None:
        threshold = teeth_threshold(fit_bulk_mode(*histogram(image.pixels)))
    return image, float(threshold), binarize_and_clean(image.pixels, threshold)
