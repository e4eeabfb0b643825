"""
Panorama rendering: each ray of the fan becomes one column, each slice of
the ROI one row, and every pixel is the Beer-Lambert absorption 1 - T along
the in-trough samples of its ray.

A panorama only ever reads voxels whose centres lie in the focal trough:
samples interpolate over their in-trough neighbours, and a sample with none
takes the value of the closest in-trough voxel.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .errors import RenderError
from .geometry import FocalTrough, Ray, RayFan, membership_mask
from .volume import WindowSpec

logger = logging.getLogger(__name__)

# Interpolation weight below which a sample has no in-trough neighbour
SUPPORT_EPS = 1e-6


@dataclass(frozen=True)
class RenderParams:
    beta: float
    render_window: WindowSpec
    delta: float  # sample step in voxels
    spacing: Tuple[float, float] = (1.0, 1.0)  # in-plane voxel size (x, y) in mm

    def __post_init__(self):
        if not self.beta > 0:
            raise RenderError(f"beta must be > 0, got {self.beta}")
        if not self.delta > 0:
            raise RenderError(f"delta must be > 0, got {self.delta}")

    def delta_mm(self, direction: Sequence[float]) -> float:
        """Physical length of one sample step along a ray direction"""
        return self.delta * math.hypot(direction[0] * self.spacing[0], direction[1] * self.spacing[1])


@dataclass(frozen=True)
class Panorama:
    pixels: np.ndarray  # (rows, columns), row 0 is the most superior slice
    roi_z: Tuple[int, int]
    provenance: Dict[str, str] = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def transmittance(samples: np.ndarray, beta: float, delta: float) -> Union[float, np.ndarray]:
    """exp(-beta * delta * sum(samples)) over the last axis"""
    values = np.asarray(samples, dtype=np.float64)
    total = np.sum(values, axis=-1, dtype=np.float64)
    result = np.exp(-beta * delta * total)
    return float(result) if np.ndim(result) == 0 else result


def _bilinear(sigma: np.ndarray, zs: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """(rows, samples) in-plane bilinear values of the slices zs"""
    coords = np.empty((3, len(zs), len(xs)))
    coords[0] = zs[:, None]
    coords[1] = ys[None, :]
    coords[2] = xs[None, :]
    values = ndimage.map_coordinates(sigma, coords.reshape(3, -1), order=1, mode="nearest")
    return values.reshape(len(zs), len(xs))


@dataclass(frozen=True)
class ConfinedVolume:
    """Render volume restricted to the voxels whose centres pass trough membership"""

    sigma: np.ndarray  # (nz, ny, nx), zero outside the trough
    inside: np.ndarray  # (ny, nx), 1.0 where the voxel centre is in the trough
    nearest: np.ndarray  # (2, ny, nx), (y, x) of the closest in-trough voxel

    @classmethod
    def from_trough(cls, sigma: np.ndarray, trough: FocalTrough) -> "ConfinedVolume":
        sigma = np.asarray(sigma, dtype=np.float64)
        if sigma.ndim != 3:
            raise RenderError(f"sigma volume must be 3-D, got shape {sigma.shape}")
        _, ny, nx = sigma.shape
        yy, xx = np.mgrid[:ny, :nx]
        centres = np.column_stack([xx.ravel(), yy.ravel()]).astype(np.float64)
        inside = membership_mask(trough, centres).reshape(ny, nx)
        if not inside.any():
            raise RenderError("no voxel centre lies inside the focal trough")

        nearest = ndimage.distance_transform_edt(~inside, return_distances=False, return_indices=True)
        logger.debug(f"Trough holds {int(inside.sum())} of {ny * nx} voxel columns")
        return cls(
            sigma=np.ascontiguousarray(sigma * inside[None, :, :]),
            inside=inside.astype(np.float64),
            nearest=nearest,
        )

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.sigma.shape

    def sample(self, zs: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """(rows, samples) values of the slices zs at the in-plane points (xs, ys)"""
        zs = np.asarray(zs, dtype=np.float64)
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        weighted = _bilinear(self.sigma, zs, xs, ys)
        support = ndimage.map_coordinates(self.inside, np.vstack([ys, xs]), order=1, mode="nearest")

        covered = support > SUPPORT_EPS
        values = np.zeros_like(weighted)
        np.divide(weighted, support[None, :], out=values, where=covered[None, :])

        stranded = ~covered
        if stranded.any():
            _, ny, nx = self.sigma.shape
            py = np.clip(np.rint(ys[stranded]).astype(np.intp), 0, ny - 1)
            px = np.clip(np.rint(xs[stranded]).astype(np.intp), 0, nx - 1)
            iy, ix = self.nearest[0, py, px], self.nearest[1, py, px]
            values[:, stranded] = self.sigma[zs.astype(np.intp)[:, None], iy[None, :], ix[None, :]]
        return values


def render_column(
    sigma: Union[np.ndarray, ConfinedVolume], ray: Ray, z_range: Tuple[int, int], params: RenderParams
) -> np.ndarray:
    """Absorption of one ray for every slice of z_range, superior slice first"""
    lo, hi = z_range
    nz, ny, nx = sigma.shape
    if not 0 <= lo < hi <= nz:
        raise RenderError(f"z range {z_range} outside volume of {nz} slices")

    rows = hi - lo
    if len(ray.samples) == 0:
        return np.zeros(rows)

    xs, ys = ray.samples[:, 0], ray.samples[:, 1]
    inside = (xs >= 0) & (xs <= nx - 1) & (ys >= 0) & (ys <= ny - 1)
    zs = np.arange(hi - 1, lo - 1, -1, dtype=np.float64)

    if isinstance(sigma, ConfinedVolume):
        values = sigma.sample(zs, xs, ys)
    else:
        values = _bilinear(sigma, zs, xs, ys)
    values = values * inside[None, :]

    return 1.0 - transmittance(values, params.beta, params.delta_mm(ray.direction))


def render_panorama(
    sigma: np.ndarray,
    fan: RayFan,
    z_range: Tuple[int, int],
    params: RenderParams,
    threads: int = 1,
) -> Panorama:
    """Render every ray; column order is fan order whatever the thread count"""
    if sigma.ndim != 3:
        raise RenderError(f"sigma volume must be 3-D, got shape {sigma.shape}")
    if len(fan) == 0:
        raise RenderError("ray fan is empty")
    if threads < 1:
        raise RenderError(f"threads must be >= 1, got {threads}")

    confined = ConfinedVolume.from_trough(sigma, fan.trough)

    def column(ray: Ray) -> np.ndarray:
        return render_column(confined, ray, z_range, params)

    if threads == 1:
        columns = [column(ray) for ray in fan.rays]
    else:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            columns = list(executor.map(column, fan.rays))

    pixels = np.column_stack(columns)
    logger.info(f"Rendered panorama {pixels.shape[1]}x{pixels.shape[0]} with {threads} thread(s)")
    return Panorama(pixels=pixels, roi_z=(int(z_range[0]), int(z_range[1])))
