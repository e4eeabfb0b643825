"""
Exception hierarchy for the panorama synthesis package.
Every module raises its own subclass so the pipeline can label failures by stage.
"""

from typing import Optional


class PanoramaError(Exception):
    """Base class for all synthesis errors"""


class ConfigError(PanoramaError):
    """Invalid or unknown configuration value"""


class VolumeError(PanoramaError):
    """Volume file or voxel data problem"""


class PhantomError(PanoramaError):
    """Phantom specification cannot be realised"""


class JawDetectionError(PanoramaError):
    """Jaw ROI, mask or contour could not be established"""


class EmptyMaskError(JawDetectionError):
    """Binary mask is empty after thresholding and cleaning"""


class GeometryError(PanoramaError):
    """Degenerate ellipse, trough or ray fan"""


class RenderError(PanoramaError):
    """Panorama rendering or image output problem"""


class MetricError(PanoramaError):
    """Images cannot be compared"""


class StageError(PanoramaError):
    """A pipeline stage failed; wraps the module error with the stage name"""

    def __init__(self, stage: str, cause: Optional[BaseException] = None):
        self.stage = stage
        self.cause = cause
        message = f"stage '{stage}' failed"
        if cause is not None:
            message = f"{message}: {cause}"
        super().__init__(message)
