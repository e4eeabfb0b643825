"""
Arch geometry in the axial plane: the trajectory ellipse, the focal trough
around it and the fan of tangent rays that become panorama columns.

Ellipse points are parameterised by an angle theta measured from the
anterior apex: P(theta) = (h + a sin theta, k - b cos theta). Negative
angles lie on the left (smaller x), so increasing theta sweeps from the left
posterior end through the incisors to the right.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import GeometryError
from .jawdetect import JawGeometry

logger = logging.getLogger(__name__)

ON_CURVE_TOLERANCE = 1e-6
ANGLE_EPS = 1e-9


@dataclass(frozen=True)
class Ellipse:
    h: float
    k: float
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise GeometryError(f"ellipse half-axes must be > 0, got a={self.a}, b={self.b}")

    def point(self, theta_deg: float) -> Tuple[float, float]:
        t = math.radians(theta_deg)
        return self.h + self.a * math.sin(t), self.k - self.b * math.cos(t)

    def direction(self, theta_deg: float) -> Tuple[float, float]:
        """Unit tangent pointing towards increasing theta"""
        t = math.radians(theta_deg)
        dx, dy = self.a * math.cos(t), self.b * math.sin(t)
        norm = math.hypot(dx, dy)
        return dx / norm, dy / norm

    def form(self, xy: np.ndarray) -> np.ndarray:
        """((x-h)/a)^2 + ((y-k)/b)^2 for (N, 2) points"""
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        return ((xy[:, 0] - self.h) / self.a) ** 2 + ((xy[:, 1] - self.k) / self.b) ** 2


@dataclass(frozen=True)
class FocalTrough:
    inner: Ellipse
    outer: Ellipse
    t_incisor: float
    t_molar: float


@dataclass(frozen=True)
class Ray:
    theta_deg: float
    tangent_point: Tuple[float, float]
    slope: Optional[float]  # None for a vertical tangent
    direction: Tuple[float, float]
    samples: np.ndarray  # (N, 2) in-trough (x, y) points, delta apart along the ray


@dataclass(frozen=True)
class RayFan:
    rays: Tuple[Ray, ...]
    angles: np.ndarray
    trajectory: Ellipse
    trough: FocalTrough
    delta: float

    def __len__(self) -> int:
        return len(self.rays)

    def column_for(self, phi_deg: float) -> int:
        """Index of the ray whose angle is closest to phi"""
        return int(np.argmin(np.abs(self.angles - phi_deg)))


def build_trajectory(jaw: JawGeometry) -> Ellipse:
    """Ellipse inscribed in the jaw bounding box"""
    x_min, x_max, y_min, y_max = jaw.bbox
    if not (x_max > x_min and y_max > y_min):
        raise GeometryError(f"jaw bounding box has zero area: {jaw.bbox}")
    return Ellipse(
        h=(x_min + x_max) / 2.0,
        k=(y_min + y_max) / 2.0,
        a=(x_max - x_min) / 2.0,
        b=(y_max - y_min) / 2.0,
    )


def tangent_slope(e: Ellipse, p: Sequence[float]) -> Optional[float]:
    """dy/dx of the tangent at p, None where the tangent is vertical"""
    x, y = float(p[0]), float(p[1])
    if abs(float(e.form(np.array([x, y]))[0]) - 1.0) > ON_CURVE_TOLERANCE:
        raise GeometryError(f"point {(x, y)} is not on the ellipse")
    dy = y - e.k
    if abs(dy) <= 1e-12 * max(1.0, e.b):
        return None
    return -(e.b**2) * (x - e.h) / (e.a**2 * dy)


def is_tangent(e: Ellipse, slope: float, intercept: float) -> bool:
    """Whether y = slope*x + intercept touches the ellipse exactly once"""
    shifted = intercept - (e.k - slope * e.h)
    expected = e.a**2 * slope**2 + e.b**2
    return abs(shifted**2 - expected) / expected < ON_CURVE_TOLERANCE


def build_trough(jaw: JawGeometry, t_incisor: float, t_molar: float) -> FocalTrough:
    """Band between two ellipses offset from the trajectory by half the thickness.

    The anterior (b) direction uses the incisor thickness and the lateral (a)
    direction the molar thickness.
    """
    if not t_incisor >= t_molar > 0:
        raise GeometryError(f"trough thickness must satisfy incisor >= molar > 0, got {t_incisor}, {t_molar}")
    base = build_trajectory(jaw)
    inner_a, inner_b = base.a - t_molar / 2.0, base.b - t_incisor / 2.0
    if inner_a <= 0 or inner_b <= 0:
        raise GeometryError(f"trough too thick for the arch: inner half-axes {inner_a}, {inner_b}")
    return FocalTrough(
        inner=Ellipse(base.h, base.k, inner_a, inner_b),
        outer=Ellipse(base.h, base.k, base.a + t_molar / 2.0, base.b + t_incisor / 2.0),
        t_incisor=t_incisor,
        t_molar=t_molar,
    )


def membership_mask(trough: FocalTrough, xy: np.ndarray) -> np.ndarray:
    """Vectorised trough membership for (N, 2) points"""
    return (trough.outer.form(xy) <= 1.0) & (trough.inner.form(xy) >= 1.0)


def membership(trough: FocalTrough, p: Sequence[float]) -> bool:
    return bool(membership_mask(trough, np.asarray(p, dtype=np.float64)[None, :2])[0])


def fan_angles(sweep_deg: float, shift_min: float, shift_max: float) -> np.ndarray:
    """Ray angles, symmetric about the apex.

    The step grows linearly from shift_min at the apex to shift_max at the
    sweep ends, so the incisors get the densest sampling.
    """
    half = sweep_deg / 2.0
    positive: List[float] = [0.0]
    while True:
        theta = positive[-1]
        step = shift_min + (shift_max - shift_min) * min(theta / half, 1.0)
        if theta + step > half + ANGLE_EPS:
            break
        positive.append(theta + step)
    return np.array([-t for t in reversed(positive[1:])] + positive)


def build_ray_fan(
    trajectory: Ellipse,
    trough: FocalTrough,
    sweep_deg: float,
    shift_min: float,
    shift_max: float,
    delta: float,
) -> RayFan:
    """One tangent ray per angle, sampled every delta voxels inside the trough"""
    if not 0 < sweep_deg <= 180:
        raise GeometryError(f"sweep must be in (0, 180] degrees, got {sweep_deg}")
    if not 0 < shift_min <= shift_max:
        raise GeometryError(f"shift range must satisfy 0 < min <= max, got {shift_min}, {shift_max}")
    if delta <= 0:
        raise GeometryError(f"delta must be > 0, got {delta}")

    angles = fan_angles(sweep_deg, shift_min, shift_max)
    # Any chord inside the outer ellipse is shorter than its major diameter
    reach = int(math.ceil(2.0 * max(trough.outer.a, trough.outer.b) / delta)) + 1
    steps = np.arange(-reach, reach + 1, dtype=np.float64) * delta

    rays = []
    for theta in angles:
        px, py = trajectory.point(theta)
        dx, dy = trajectory.direction(theta)
        line = np.column_stack([px + steps * dx, py + steps * dy])
        rays.append(
            Ray(
                theta_deg=float(theta),
                tangent_point=(px, py),
                slope=tangent_slope(trajectory, (px, py)),
                direction=(dx, dy),
                samples=line[membership_mask(trough, line)],
            )
        )

    empty = sum(1 for r in rays if len(r.samples) == 0)
    logger.info(f"Built ray fan: {len(rays)} rays over {sweep_deg} deg, {empty} without trough samples")
    return RayFan(rays=tuple(rays), angles=angles, trajectory=trajectory, trough=trough, delta=float(delta))
