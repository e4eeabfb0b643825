"""
Image output (PGM/PNG at 8 or 16 bits) and numbered debug dumps of the
intermediate pipeline images.
"""

import logging
from pathlib import Path
from typing import Optional, Union

import cv2
import numpy as np

from .errors import RenderError
from .geometry import Ellipse, RayFan

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
OVERLAY_RAY_EVERY = 10


def to_uint(pixels: np.ndarray, bits: int = 8) -> np.ndarray:
    """Quantise [0, 1] pixels to 8 or 16 bit integers"""
    if bits == 8:
        dtype, peak = np.uint8, 255
    elif bits == 16:
        dtype, peak = np.uint16, 65535
    else:
        raise RenderError(f"bits must be 8 or 16, got {bits}")
    clipped = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    return np.rint(clipped * peak).astype(dtype)


def write_image(path: PathLike, pixels: np.ndarray, bits: int = 8) -> Path:
    """Write a grey image; the format follows the suffix (.pgm or .png)"""
    target = Path(path)
    if target.suffix.lower() not in (".pgm", ".png"):
        raise RenderError(f"unsupported image format {target.suffix!r}, use .pgm or .png")
    target.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(target), to_uint(pixels, bits)):
        raise RenderError(f"failed to write image {target}")
    return target


def read_image(path: PathLike) -> np.ndarray:
    """Read an 8 or 16 bit grey image back into [0, 1]"""
    source = Path(path)
    if not source.is_file():
        raise RenderError(f"image not found: {source}")
    image = cv2.imread(str(source), cv2.IMREAD_UNCHANGED)
    if image is None:
        raise RenderError(f"unreadable image: {source}")
    if image.ndim == 3:
        image = cv2.cvtColor(image, cv2.COLOR_BGR2GRAY)
    peak = 65535.0 if image.dtype == np.uint16 else 255.0
    return image.astype(np.float64) / peak


def normalise(image: np.ndarray) -> np.ndarray:
    """Scale an image so its maximum is 1"""
    image = np.asarray(image).astype(np.float64)
    top = float(image.max()) if image.size else 0.0
    return image / top if top > 0 else np.zeros_like(image)


def _ellipse_polyline(e: Ellipse, samples: int = 360) -> np.ndarray:
    theta = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    points = np.column_stack([e.h + e.a * np.sin(theta), e.k - e.b * np.cos(theta)])
    return np.rint(points).astype(np.int32).reshape(-1, 1, 2)


def draw_contour(image: np.ndarray, contour: np.ndarray) -> np.ndarray:
    canvas = to_uint(normalise(image) * 0.6)
    cv2.polylines(canvas, [np.rint(contour).astype(np.int32).reshape(-1, 1, 2)], True, 255, 1)
    return canvas.astype(np.float64) / 255.0


def draw_fan(image: np.ndarray, fan: RayFan, every: int = OVERLAY_RAY_EVERY) -> np.ndarray:
    """Trajectory, trough and every n-th ray over an axial image"""
    canvas = to_uint(normalise(image) * 0.6)
    for e in (fan.trajectory, fan.trough.inner, fan.trough.outer):
        cv2.polylines(canvas, [_ellipse_polyline(e)], True, 255, 1)
    for ray in fan.rays[::every]:
        if len(ray.samples) > 1:
            start, end = np.rint(ray.samples[[0, -1]]).astype(int)
            cv2.line(canvas, tuple(int(v) for v in start), tuple(int(v) for v in end), 200, 1)
    return canvas.astype(np.float64) / 255.0


class DebugDumper:
    """Writes NN_stage.pgm files into a directory; disabled without one"""

    def __init__(self, directory: Optional[PathLike]):
        self.directory = Path(directory) if directory else None
        self.counter = 0
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    @property
    def enabled(self) -> bool:
        return self.directory is not None

    def dump(self, stage: str, image: np.ndarray) -> Optional[Path]:
        if self.directory is None:
            return None
        self.counter += 1
        path = self.directory / f"{self.counter:02d}_{stage}.pgm"
        write_image(path, normalise(image))
        logger.debug(f"Wrote debug image {path}")
        return path
