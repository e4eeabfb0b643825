"""
CBCT voxel volumes: the PVOL1 file format, linear rescale, windowing and
point sampling.

Arrays are stored C-ordered with shape (nz, ny, nx), which is the x-fastest
order of the file payload. Points are given as (x, y, z) voxel coordinates.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .errors import VolumeError

logger = logging.getLogger(__name__)

MAGIC = "PVOL1"
ENDIANNESS = "little"
MAX_VOXELS = 2**31
HEADER_FIELDS = 10

SampleMode = Literal["nearest", "trilinear"]
PathLike = Union[str, Path]


@dataclass(frozen=True)
class WindowSpec:
    """Intensity window [lo, hi] in rescaled units"""

    lo: float
    hi: float

    def __post_init__(self):
        if not np.isfinite(self.lo) or not np.isfinite(self.hi) or not self.lo < self.hi:
            raise VolumeError(f"degenerate window [{self.lo}, {self.hi}]")

    @classmethod
    def of(cls, bounds: Sequence[float]) -> "WindowSpec":
        lo, hi = bounds
        return cls(float(lo), float(hi))


@dataclass(frozen=True)
class VolumeHeader:
    """First line of a PVOL1 file"""

    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    slope: float
    intercept: float
    magic: str = MAGIC
    endianness: str = ENDIANNESS
    # Original header text, kept so a re-write reproduces the file exactly
    text: str = field(default="", compare=False)

    @property
    def voxel_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @classmethod
    def parse(cls, line: str) -> "VolumeHeader":
        """Parse the ASCII header line (without the trailing newline)"""
        tokens = line.split(" ")
        if len(tokens) != HEADER_FIELDS:
            raise VolumeError(f"malformed header: expected {HEADER_FIELDS} fields, got {len(tokens)}")
        if tokens[0] != MAGIC:
            raise VolumeError(f"malformed header: bad magic {tokens[0]!r}")
        if tokens[9] != ENDIANNESS:
            raise VolumeError(f"malformed header: unsupported endianness {tokens[9]!r}")

        try:
            dims = tuple(int(t) for t in tokens[1:4])
            spacing = tuple(float(t) for t in tokens[4:7])
            slope = float(tokens[7])
            intercept = float(tokens[8])
        except ValueError as e:
            raise VolumeError(f"malformed header: {e}") from None

        if any(d < 1 for d in dims):
            raise VolumeError(f"malformed header: dims must be >= 1, got {dims}")
        if any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise VolumeError(f"malformed header: spacing must be > 0, got {spacing}")
        if not (np.isfinite(slope) and np.isfinite(intercept)):
            raise VolumeError("malformed header: non-finite rescale parameters")
        if dims[0] * dims[1] * dims[2] > MAX_VOXELS:
            raise VolumeError(f"dims overflow: {dims} exceeds {MAX_VOXELS} voxels")

        return cls(dims=dims, spacing=spacing, slope=slope, intercept=intercept, text=line)

    def format(self) -> str:
        """Header line without newline; the original text is reused when it still matches"""
        if self.text:
            try:
                if VolumeHeader.parse(self.text) == self:
                    return self.text
            except VolumeError:
                pass
        values = [self.magic, *map(str, self.dims), *map(repr, self.spacing), repr(self.slope), repr(self.intercept)]
        return " ".join(values + [self.endianness])


@dataclass(frozen=True, eq=False)
class Volume:
    """Immutable int16 voxel grid with spacing and rescale parameters"""

    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    raw: np.ndarray
    rescale_slope: float = 1.0
    rescale_intercept: float = 0.0
    header: VolumeHeader = None

    def __post_init__(self):
        nx, ny, nz = self.dims
        if min(self.dims) < 1:
            raise VolumeError(f"dims must be >= 1, got {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise VolumeError(f"spacing must be > 0, got {self.spacing}")
        if self.raw.dtype != np.int16:
            raise VolumeError(f"raw voxels must be int16, got {self.raw.dtype}")
        if self.raw.shape != (nz, ny, nx):
            raise VolumeError(f"raw shape {self.raw.shape} does not match dims {self.dims}")
        if not (np.isfinite(self.rescale_slope) and np.isfinite(self.rescale_intercept)):
            raise VolumeError("rescale parameters must be finite")
        self.raw.setflags(write=False)
        if self.header is None:
            header = VolumeHeader(
                dims=tuple(self.dims),
                spacing=tuple(self.spacing),
                slope=self.rescale_slope,
                intercept=self.rescale_intercept,
            )
            object.__setattr__(self, "header", header)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.raw.shape

    @classmethod
    def from_array(
        cls,
        raw: np.ndarray,
        spacing: Sequence[float] = (1.0, 1.0, 1.0),
        slope: float = 1.0,
        intercept: float = 0.0,
    ) -> "Volume":
        """Wrap a (nz, ny, nx) int16 array"""
        raw = np.array(raw, dtype=np.int16, order="C", copy=True)
        nz, ny, nx = raw.shape
        return cls(
            dims=(nx, ny, nz),
            spacing=tuple(float(s) for s in spacing),
            raw=raw,
            rescale_slope=float(slope),
            rescale_intercept=float(intercept),
        )


def load_volume(path: PathLike) -> Volume:
    """Read a PVOL1 file; no value transformation is applied"""
    volume_path = Path(path)
    if not volume_path.is_file():
        raise VolumeError(f"volume file not found: {volume_path}")

    data = volume_path.read_bytes()
    newline = data.find(b"\n")
    if newline < 0:
        raise VolumeError("malformed header: missing newline")
    try:
        line = data[:newline].decode("ascii")
    except UnicodeDecodeError:
        raise VolumeError("malformed header: not ASCII") from None

    header = VolumeHeader.parse(line)
    payload = memoryview(data)[newline + 1 :]
    expected = header.voxel_count * 2
    if len(payload) < expected:
        raise VolumeError(f"truncated payload: expected {expected} bytes, got {len(payload)}")
    if len(payload) > expected:
        raise VolumeError(f"payload too long: expected {expected} bytes, got {len(payload)}")

    nx, ny, nz = header.dims
    raw = np.frombuffer(payload, dtype="<i2").astype(np.int16).reshape(nz, ny, nx)
    logger.info(f"Loaded volume {volume_path.name}: dims={header.dims} spacing={header.spacing}")
    return Volume(
        dims=header.dims,
        spacing=header.spacing,
        raw=raw,
        rescale_slope=header.slope,
        rescale_intercept=header.intercept,
        header=header,
    )


def write_volume(volume: Volume, path: PathLike) -> None:
    """Write a PVOL1 file (header line + little-endian int16 payload)"""
    header = volume.header
    if (header.dims, header.spacing, header.slope, header.intercept) != (
        tuple(volume.dims),
        tuple(volume.spacing),
        volume.rescale_slope,
        volume.rescale_intercept,
    ):
        header = VolumeHeader(
            dims=tuple(volume.dims),
            spacing=tuple(volume.spacing),
            slope=volume.rescale_slope,
            intercept=volume.rescale_intercept,
        )
    payload = np.ascontiguousarray(volume.raw, dtype="<i2").tobytes()
    Path(path).write_bytes(header.format().encode("ascii") + b"\n" + payload)


def rescale(volume: Volume) -> np.ndarray:
    """Linear rescale raw*slope + intercept in double precision"""
    values = volume.raw.astype(np.float64) * volume.rescale_slope + volume.rescale_intercept
    if not np.all(np.isfinite(values)):
        raise VolumeError("rescaled values are not finite")
    return values


def window(values: np.ndarray, w: WindowSpec) -> np.ndarray:
    """Map [lo, hi] onto [0, 1], clamping outside values"""
    if not w.lo < w.hi:
        raise VolumeError(f"degenerate window [{w.lo}, {w.hi}]")
    scaled = (np.asarray(values, dtype=np.float64) - w.lo) / (w.hi - w.lo)
    return np.clip(scaled, 0.0, 1.0)


def sample_points(values: np.ndarray, points: np.ndarray, mode: SampleMode = "trilinear") -> np.ndarray:
    """Sample a (nz, ny, nx) array at an (N, 3) array of (x, y, z) voxel coordinates"""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    upper = np.array(values.shape[::-1], dtype=np.float64) - 1.0
    if np.any(points < 0.0) or np.any(points > upper):
        raise VolumeError(f"sample point out of bounds [0, {tuple(upper)}]")

    if mode == "nearest":
        index = np.floor(points + 0.5).astype(np.intp)
        return values[index[:, 2], index[:, 1], index[:, 0]].astype(np.float64)
    if mode == "trilinear":
        coords = points[:, ::-1].T
        return ndimage.map_coordinates(values.astype(np.float64, copy=False), coords, order=1, mode="nearest")
    raise VolumeError(f"unknown sample mode {mode!r}")


def sample(values: np.ndarray, p: Sequence[float], mode: SampleMode = "trilinear") -> float:
    """Sample one (x, y, z) point"""
    return float(sample_points(values, np.asarray(p, dtype=np.float64)[None, :], mode)[0])
