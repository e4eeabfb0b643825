"""Panoramic X-ray synthesis from CBCT volumes."""

from .config import PipelineConfig, SynthesisConfig, config
from .errors import PanoramaError, StageError
from .phantom import PhantomSpec, PhantomTruth, generate
from .pipeline import PanoramaPipeline, PipelineResult, panorama_graph, run_pipeline
from .volume import Volume, WindowSpec, load_volume, write_volume

__all__ = [
    "PanoramaError",
    "PanoramaPipeline",
    "PhantomSpec",
    "PhantomTruth",
    "PipelineConfig",
    "PipelineResult",
    "StageError",
    "SynthesisConfig",
    "Volume",
    "WindowSpec",
    "config",
    "generate",
    "load_volume",
    "panorama_graph",
    "run_pipeline",
    "write_volume",
]
