"""
Parametric head phantoms with known ground truth.

The jaw is a single dental arch on an ellipse: crowns are ellipsoids, roots
are vertical cylinders, and the mandible/maxilla are bone bands that follow
the anterior half of the arch and continue as straight rami behind it, so the
jaw footprint spans the full height of the arch ellipse. All geometry is
evaluated in millimetres in the untilted jaw frame; a tilt rotates the whole
jaw about the vertical axis through the centre of the axial plane.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Tuple, Union

import numpy as np
from dotenv import dotenv_values

from .errors import PhantomError
from .volume import Volume

logger = logging.getLogger(__name__)

RESCALE_SLOPE = 1.0
RESCALE_INTERCEPT = -1000.0

ARCH_HALF_SPAN_DEG = 80.0
HEAD_FRACTION = 0.48
ARC_SAMPLES = 20001


@dataclass(frozen=True)
class PhantomSpec:
    """Phantom layout; lengths in mm, intensity levels in rescaled units"""

    dims: Tuple[int, int, int] = (128, 128, 96)
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    arch_axes: Tuple[float, float] = (42.0, 46.0)
    # Arch centre in mm; None uses the centre of the axial plane
    arch_center: Optional[Tuple[float, float]] = None
    tooth_count: int = 16
    missing_teeth: FrozenSet[int] = frozenset()
    implant_teeth: FrozenSet[int] = frozenset()
    tilt_deg: float = 0.0
    air: float = -1000.0
    soft_tissue: float = 40.0
    bone: float = 700.0
    enamel: float = 1800.0
    metal: float = 3000.0
    # Jaw slice range [z_lo, z_hi); None uses the middle 60% of the volume
    jaw_z: Optional[Tuple[int, int]] = None
    tooth_width: float = 6.8
    tooth_depth: float = 7.0
    crown_height: float = 9.0
    root_height: float = 13.0
    root_radius: float = 2.0
    bone_width: float = 6.0
    texture_hu: float = 80.0
    root_jitter: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "missing_teeth", frozenset(int(i) for i in self.missing_teeth))
        object.__setattr__(self, "implant_teeth", frozenset(int(i) for i in self.implant_teeth))

    def validate(self) -> None:
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise PhantomError(f"dims must be three positive counts, got {self.dims}")
        if min(self.spacing) <= 0:
            raise PhantomError(f"spacing must be > 0, got {self.spacing}")
        if self.tooth_count < 1:
            raise PhantomError(f"tooth_count must be >= 1, got {self.tooth_count}")
        if not self.soft_tissue < self.bone < self.enamel < self.metal:
            raise PhantomError("intensity levels must satisfy soft_tissue < bone < enamel < metal")
        if not self.air < self.soft_tissue:
            raise PhantomError("air level must be below soft tissue")
        teeth = set(range(self.tooth_count))
        if not (self.missing_teeth | self.implant_teeth) <= teeth:
            raise PhantomError(f"missing/implant indices must lie in [0, {self.tooth_count})")
        if self.missing_teeth & self.implant_teeth:
            raise PhantomError("a tooth cannot be both missing and an implant")
        if not abs(self.tilt_deg) < 45.0:
            raise PhantomError(f"|tilt_deg| must be < 45, got {self.tilt_deg}")
        if min(self.arch_axes) <= 0:
            raise PhantomError(f"arch half-axes must be > 0, got {self.arch_axes}")
        sizes = (self.tooth_width, self.tooth_depth, self.crown_height, self.root_height, self.root_radius)
        if min(sizes) <= 0 or self.bone_width <= 0:
            raise PhantomError("tooth and bone dimensions must be > 0")
        if self.texture_hu < 0 or self.root_jitter < 0:
            raise PhantomError("texture_hu and root_jitter must be >= 0")

    def resolved_jaw_z(self) -> Tuple[int, int]:
        if self.jaw_z is not None:
            return int(self.jaw_z[0]), int(self.jaw_z[1])
        nz = self.dims[2]
        return int(round(0.2 * nz)), int(round(0.8 * nz))

    def resolved_center(self) -> Tuple[float, float]:
        if self.arch_center is not None:
            return float(self.arch_center[0]), float(self.arch_center[1])
        nx, ny, _ = self.dims
        sx, sy, _ = self.spacing
        return (nx - 1) / 2.0 * sx, (ny - 1) / 2.0 * sy


@dataclass(frozen=True)
class ToothTruth:
    """Ground truth of one tooth, positions in voxel coordinates"""

    index: int
    x: float
    y: float
    phi_deg: float
    state: str  # present | missing | implant


@dataclass(frozen=True)
class PhantomTruth:
    tilt_deg: float
    arch_center: Tuple[float, float]
    arch_axes: Tuple[float, float]
    teeth: Tuple[ToothTruth, ...]
    roi_z: Tuple[int, int]
    crown_z: Tuple[int, int]
    seed: int = 0

    @property
    def present_teeth(self) -> List[ToothTruth]:
        return [t for t in self.teeth if t.state != "missing"]

    def arch_bbox(self) -> Tuple[float, float, float, float]:
        """Bounding box (x_min, x_max, y_min, y_max) of the untilted arch ellipse"""
        (cx, cy), (a, b) = self.arch_center, self.arch_axes
        return cx - a, cx + a, cy - b, cy + b

    def to_key_values(self) -> Dict[str, str]:
        values = {
            "tilt_deg": repr(float(self.tilt_deg)),
            "seed": str(self.seed),
            "arch_center": f"{self.arch_center[0]!r},{self.arch_center[1]!r}",
            "arch_axes": f"{self.arch_axes[0]!r},{self.arch_axes[1]!r}",
            "roi_z": f"{self.roi_z[0]},{self.roi_z[1]}",
            "crown_z": f"{self.crown_z[0]},{self.crown_z[1]}",
            "tooth_count": str(len(self.teeth)),
        }
        for tooth in self.teeth:
            values[f"tooth.{tooth.index:02d}"] = f"{tooth.x!r},{tooth.y!r},{tooth.phi_deg!r},{tooth.state}"
        return values


def write_truth(truth: PhantomTruth, path: Union[str, Path]) -> None:
    """Write the truth sidecar as key=value lines"""
    lines = [f"{key}={value}\n" for key, value in truth.to_key_values().items()]
    Path(path).write_text("".join(lines))


def read_truth(path: Union[str, Path]) -> PhantomTruth:
    """Read a truth sidecar written by write_truth"""
    source = Path(path)
    if not source.is_file():
        raise PhantomError(f"truth sidecar not found: {source}")
    values: Dict[str, str] = {k: v for k, v in dotenv_values(source, interpolate=False).items() if v is not None}

    def pair(key: str, cast=float):
        first, second = values[key].split(",")
        return cast(first), cast(second)

    teeth = []
    for key in sorted(k for k in values if k.startswith("tooth.")):
        x, y, phi, state = values[key].split(",")
        teeth.append(ToothTruth(int(key.split(".")[1]), float(x), float(y), float(phi), state))

    return PhantomTruth(
        tilt_deg=float(values["tilt_deg"]),
        arch_center=pair("arch_center"),
        arch_axes=pair("arch_axes"),
        teeth=tuple(teeth),
        roi_z=pair("roi_z", int),
        crown_z=pair("crown_z", int),
        seed=int(values.get("seed", "0")),
    )


def tooth_angles(a: float, b: float, count: int, half_span_deg: float = ARCH_HALF_SPAN_DEG) -> np.ndarray:
    """Ellipse parameters (deg from the anterior apex) at equal arc-length spacing"""
    if count == 1:
        return np.zeros(1)
    phi = np.linspace(-half_span_deg, half_span_deg, ARC_SAMPLES)
    rad = np.radians(phi)
    speed = np.hypot(a * np.cos(rad), b * np.sin(rad))
    arc = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(rad))])
    targets = np.linspace(0.0, arc[-1], count)
    angles = np.interp(targets, arc, phi)
    # Mirror so the layout is exactly symmetric about the apex
    half = count // 2
    angles[count - half :] = -angles[:half][::-1]
    if count % 2 == 1:
        angles[half] = 0.0
    return angles


def _arch_point(center: Tuple[float, float], axes: Tuple[float, float], phi_deg: np.ndarray):
    rad = np.radians(phi_deg)
    return center[0] + axes[0] * np.sin(rad), center[1] - axes[1] * np.cos(rad)


def _arch_frame(axes: Tuple[float, float], phi_deg: float):
    """Unit tangent and outward normal of the arch at phi"""
    rad = np.radians(phi_deg)
    tangent = np.array([axes[0] * np.cos(rad), axes[1] * np.sin(rad)])
    tangent /= np.linalg.norm(tangent)
    normal = np.array([tangent[1], -tangent[0]])
    return tangent, normal


class PhantomBuilder:
    """Voxelizes a PhantomSpec"""

    def __init__(self, spec: PhantomSpec, seed: int = 0):
        spec.validate()
        self.spec = spec
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.logger = logging.getLogger(__name__)

        nx, ny, nz = spec.dims
        sx, sy, sz = spec.spacing
        self.center = spec.resolved_center()
        self.pivot = ((nx - 1) / 2.0 * sx, (ny - 1) / 2.0 * sy)
        theta = np.radians(spec.tilt_deg)
        self.cos_t, self.sin_t = np.cos(theta), np.sin(theta)

        # World (tilted) millimetre coordinates of every axial pixel, then the jaw frame
        xw = np.arange(nx) * sx
        yw = np.arange(ny) * sy
        self.xw, self.yw = np.meshgrid(xw, yw)
        self.xj, self.yj = self._to_jaw(self.xw, self.yw)
        self.zw = np.arange(nz) * sz

    def _to_jaw(self, x, y):
        dx, dy = x - self.pivot[0], y - self.pivot[1]
        return (
            self.pivot[0] + self.cos_t * dx + self.sin_t * dy,
            self.pivot[1] - self.sin_t * dx + self.cos_t * dy,
        )

    def _to_world(self, x, y):
        dx, dy = x - self.pivot[0], y - self.pivot[1]
        return (
            self.pivot[0] + self.cos_t * dx - self.sin_t * dy,
            self.pivot[1] + self.sin_t * dx + self.cos_t * dy,
        )

    def _layout(self) -> Dict[str, float]:
        spec = self.spec
        sz = spec.spacing[2]
        z_lo, z_hi = spec.resolved_jaw_z()
        if not 0 <= z_lo < z_hi <= spec.dims[2]:
            raise PhantomError(f"jaw z-range {(z_lo, z_hi)} outside volume of {spec.dims[2]} slices")
        jaw_lo, jaw_hi = z_lo * sz, (z_hi - 1) * sz
        crown_mid = jaw_lo + 0.55 * (jaw_hi - jaw_lo)
        crown_lo = crown_mid - spec.crown_height / 2.0
        crown_hi = crown_mid + spec.crown_height / 2.0
        root_lo = crown_lo - spec.root_height
        if root_lo - spec.root_jitter < jaw_lo or crown_hi >= jaw_hi:
            raise PhantomError("dims too small for arch: teeth do not fit inside the jaw z-range")
        return {
            "jaw_lo": jaw_lo,
            "jaw_hi": jaw_hi,
            "crown_mid": crown_mid,
            "crown_lo": crown_lo,
            "crown_hi": crown_hi,
            "root_lo": root_lo,
        }

    def _check_fit(self, angles: np.ndarray, footprint: np.ndarray) -> None:
        spec = self.spec
        xs, ys = _arch_point(self.center, spec.arch_axes, angles)
        if len(angles) > 1:
            chords = np.hypot(np.diff(xs), np.diff(ys))
            if chords.min() < spec.tooth_width + min(spec.spacing[:2]):
                raise PhantomError(
                    f"teeth overlap: arch too small for {spec.tooth_count} teeth "
                    f"(spacing {chords.min():.2f} mm, tooth width {spec.tooth_width} mm)"
                )

        # The tilted jaw must stay clear of the axial field border
        border = np.ones_like(footprint)
        border[1:-1, 1:-1] = False
        if not footprint.any() or (footprint & border).any():
            raise PhantomError("dims too small for arch: jaw leaves the axial field of view")
        nx, ny, _ = spec.dims
        sx, sy, _ = spec.spacing
        reach = max(spec.tooth_width, spec.tooth_depth) / 2.0
        wx, wy = self._to_world(xs, ys)
        if (wx - reach).min() < 0 or (wy - reach).min() < 0:
            raise PhantomError("dims too small for arch: teeth leave the axial field of view")
        if (wx + reach).max() > (nx - 1) * sx or (wy + reach).max() > (ny - 1) * sy:
            raise PhantomError("dims too small for arch: teeth leave the axial field of view")

    def _jaw_footprint(self) -> np.ndarray:
        """Axial footprint of the jaw bone: a band on the anterior half of the arch plus two rami"""
        spec = self.spec
        a, b = spec.arch_axes
        half = spec.bone_width / 2.0
        dx = self.xj - self.center[0]
        dy = self.yj - self.center[1]

        # First-order distance to the arch ellipse
        rho = np.sqrt((dx / a) ** 2 + (dy / b) ** 2)
        grad = np.hypot(dx / a**2, dy / b**2) / np.maximum(rho, 1e-9)
        distance = (rho - 1.0) / np.maximum(grad, 1e-12)
        band = (np.abs(distance) <= half) & (dy <= 0)

        ramus_end = b + max(spec.bone_width, spec.tooth_depth) / 2.0
        rami = (np.abs(np.abs(dx) - a) <= half) & (dy > 0) & (dy <= ramus_end)
        return band | rami

    def _paint_tooth(
        self,
        labels: np.ndarray,
        phi_deg: float,
        layout: Dict[str, float],
        root_lo: float,
        crown_label: int,
    ) -> None:
        spec = self.spec
        sx, sy, sz = spec.spacing
        cx, cy = _arch_point(self.center, spec.arch_axes, np.array([phi_deg]))
        cx, cy = float(cx[0]), float(cy[0])
        tangent, normal = _arch_frame(spec.arch_axes, phi_deg)

        # Pixel window around the tilted tooth centre
        wx, wy = self._to_world(cx, cy)
        reach = max(spec.tooth_width, spec.tooth_depth) / 2.0 + 2.0
        nx, ny, nz = spec.dims
        x0, x1 = max(int(np.floor((wx - reach) / sx)), 0), min(int(np.ceil((wx + reach) / sx)) + 1, nx)
        y0, y1 = max(int(np.floor((wy - reach) / sy)), 0), min(int(np.ceil((wy + reach) / sy)) + 1, ny)
        z0 = max(int(np.floor(root_lo / sz)), 0)
        z1 = min(int(np.ceil(layout["crown_hi"] / sz)) + 1, nz)

        ox = self.xj[y0:y1, x0:x1] - cx
        oy = self.yj[y0:y1, x0:x1] - cy
        u = ox * tangent[0] + oy * tangent[1]
        v = ox * normal[0] + oy * normal[1]
        footprint = (u / (spec.tooth_width / 2.0)) ** 2 + (v / (spec.tooth_depth / 2.0)) ** 2
        root_disc = ox**2 + oy**2 <= spec.root_radius**2

        z = self.zw[z0:z1][:, None, None]
        dz = ((z - layout["crown_mid"]) / (spec.crown_height / 2.0)) ** 2
        crown = footprint[None, :, :] + dz <= 1.0
        root = root_disc[None, :, :] & (z >= root_lo) & (z <= layout["crown_mid"])

        block = labels[z0:z1, y0:y1, x0:x1]
        block[root] = np.maximum(block[root], LABEL_ENAMEL)
        block[crown] = crown_label

    def build(self) -> Tuple[Volume, PhantomTruth]:
        spec = self.spec
        nx, ny, nz = spec.dims
        sx, sy, sz = spec.spacing
        layout = self._layout()
        angles = tooth_angles(spec.arch_axes[0], spec.arch_axes[1], spec.tooth_count)
        footprint = self._jaw_footprint()
        self._check_fit(angles, footprint)
        jitter = self.rng.uniform(-spec.root_jitter, spec.root_jitter, size=spec.tooth_count)

        labels = np.zeros((nz, ny, nx), dtype=np.uint8)

        # Head: rounded-square cylinder of soft tissue around the axial centre
        hx = HEAD_FRACTION * nx * sx
        hy = HEAD_FRACTION * ny * sy
        head = ((self.xw - self.pivot[0]) / hx) ** 4 + ((self.yw - self.pivot[1]) / hy) ** 4 <= 1.0
        labels[:, head] = LABEL_SOFT

        # Mandible up to the crowns, maxilla from the crowns to the top of the jaw
        mandible = (self.zw >= layout["jaw_lo"]) & (self.zw <= layout["crown_lo"] + 1.0)
        maxilla = (self.zw >= layout["crown_hi"]) & (self.zw <= layout["jaw_hi"])
        for zi in np.flatnonzero(mandible | maxilla):
            labels[zi][footprint] = LABEL_BONE

        teeth = []
        for index, phi in enumerate(angles):
            tx, ty = _arch_point(self.center, spec.arch_axes, np.array([phi]))
            wx, wy = self._to_world(float(tx[0]), float(ty[0]))
            if index in spec.missing_teeth:
                state = "missing"
            elif index in spec.implant_teeth:
                state = "implant"
            else:
                state = "present"
            teeth.append(ToothTruth(index, wx / sx, wy / sy, float(phi), state))
            if state == "missing":
                continue
            crown_label = LABEL_METAL if state == "implant" else LABEL_ENAMEL
            root_lo = layout["root_lo"] + float(jitter[index])
            self._paint_tooth(labels, float(phi), layout, root_lo, crown_label)

        levels = np.array([spec.air, spec.soft_tissue, spec.bone, spec.enamel, spec.metal])
        values = levels[labels]
        if spec.texture_hu > 0:
            texture = self.rng.normal(0.0, spec.texture_hu, size=labels.shape)
            textured = (labels >= LABEL_SOFT) & (labels <= LABEL_ENAMEL)
            values[textured] += texture[textured]

        raw = np.rint((values - RESCALE_INTERCEPT) / RESCALE_SLOPE)
        raw = np.clip(raw, np.iinfo(np.int16).min, np.iinfo(np.int16).max).astype(np.int16)
        volume = Volume.from_array(raw, spacing=spec.spacing, slope=RESCALE_SLOPE, intercept=RESCALE_INTERCEPT)

        crown_z = (int(np.ceil(layout["crown_lo"] / sz)), int(np.floor(layout["crown_hi"] / sz)) + 1)
        truth = PhantomTruth(
            tilt_deg=float(spec.tilt_deg),
            arch_center=(self.center[0] / sx, self.center[1] / sy),
            arch_axes=(spec.arch_axes[0] / sx, spec.arch_axes[1] / sy),
            teeth=tuple(teeth),
            roi_z=spec.resolved_jaw_z(),
            crown_z=crown_z,
            seed=self.seed,
        )
        self.logger.info(
            f"Generated phantom dims={spec.dims} teeth={spec.tooth_count} "
            f"missing={sorted(spec.missing_teeth)} implants={sorted(spec.implant_teeth)} tilt={spec.tilt_deg}"
        )
        return volume, truth


LABEL_AIR, LABEL_SOFT, LABEL_BONE, LABEL_ENAMEL, LABEL_METAL = range(5)


def generate(spec: PhantomSpec, seed: int = 0) -> Tuple[Volume, PhantomTruth]:
    """Deterministic phantom volume and truth for (spec, seed)"""
    return PhantomBuilder(spec, seed).build()
