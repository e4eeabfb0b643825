"""
Panorama synthesis pipeline.

Each stage is a node of a linear LangGraph StateGraph operating on a shared
TypedDict state. Nodes return only the keys they produce; stage timings are
accumulated through an additive reducer and reported as a table at the end.
"""

import functools
import logging
import operator
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Any, Callable, Dict, List, Optional, Tuple, TypedDict

import numpy as np
import pandas as pd
from langgraph.graph import END, START, StateGraph

from .config import PipelineConfig, SynthesisConfig, format_key_values
from .debug import DebugDumper, draw_contour, draw_fan, write_image
from .errors import ConfigError, EmptyMaskError, PanoramaError, StageError
from .geometry import Ellipse, FocalTrough, RayFan, build_ray_fan, build_trajectory, build_trough
from .jawdetect import (
    GaussianFit,
    JawGeometry,
    TiltEstimate,
    binarize_and_clean,
    correct_tilt,
    estimate_tilt,
    extract_contour,
    fit_bulk_mode,
    fit_gaussian,
    histogram,
    jaw_mask,
    mip,
    roi_slices,
    teeth_threshold,
)
from .render import Panorama, RenderParams, render_panorama
from .volume import Volume, WindowSpec, load_volume, rescale, window

logger = logging.getLogger(__name__)

STAGES = (
    "load",
    "rescale",
    "window",
    "coronal_roi",
    "axial_mask",
    "contour",
    "tilt",
    "trough",
    "trajectory",
    "fan",
    "render",
    "write",
)
RECURSION_LIMIT = 50


class PipelineState(TypedDict, total=False):
    config: PipelineConfig
    dumper: DebugDumper
    volume: Volume
    rescaled: np.ndarray
    windowed: np.ndarray
    roi_fit: GaussianFit
    roi_z: Tuple[int, int]
    axial_mip: np.ndarray
    threshold: float
    mask: np.ndarray
    contour: np.ndarray
    tilt: TiltEstimate
    residual_tilt: Optional[TiltEstimate]
    jaw: JawGeometry
    trough: FocalTrough
    trajectory: Ellipse
    fan: RayFan
    panorama: Panorama
    output_path: Path
    timings: Annotated[List[Dict[str, Any]], operator.add]


@dataclass
class PipelineResult:
    panorama: Panorama
    jaw: JawGeometry
    fan: RayFan
    output_path: Optional[Path]
    timings: pd.DataFrame


def stage(name: str) -> Callable:
    """Time a node, log it and label any failure with the stage name"""

    def decorator(func: Callable[[PipelineState], Dict[str, Any]]) -> Callable:
        @functools.wraps(func)
        def node(state: PipelineState) -> Dict[str, Any]:
            start = time.perf_counter()
            try:
                update = func(state)
            except StageError:
                raise
            except Exception as e:
                logger.error(f"Stage {name} failed: {e}", exc_info=not isinstance(e, PanoramaError))
                raise StageError(name, e) from e
            elapsed = time.perf_counter() - start
            logger.info(f"Stage {name} finished in {elapsed:.3f}s")
            update["timings"] = [{"stage": name, "seconds": elapsed}]
            return update

        return node

    return decorator


def _diagnostic_dump(state: PipelineState, name: str, image: np.ndarray) -> None:
    """Write the image that produced an empty jaw mask"""
    dumper = state["dumper"]
    if dumper.enabled:
        path = dumper.dump(f"{name}_empty", image)
    else:
        output = state["config"].output
        path = Path(f"{output}.{name}.pgm") if output else None
        if path is not None:
            write_image(path, image / image.max() if image.max() > 0 else image)
    if path is not None:
        logger.error(f"Empty jaw mask, diagnostic projection written to {path}")


@stage("load")
def load_node(state: PipelineState) -> Dict[str, Any]:
    return {"volume": load_volume(state["config"].input)}


@stage("rescale")
def rescale_node(state: PipelineState) -> Dict[str, Any]:
    return {"rescaled": rescale(state["volume"])}


@stage("window")
def window_node(state: PipelineState) -> Dict[str, Any]:
    cfg = state["config"]
    return {"windowed": window(state["rescaled"], WindowSpec.of(cfg.preprocess_window))}


@stage("coronal_roi")
def coronal_roi_node(state: PipelineState) -> Dict[str, Any]:
    windowed = state["windowed"]
    dumper = state["dumper"]
    coronal = mip(windowed, "coronal")
    dumper.dump("coronal_mip", coronal.pixels)

    try:
        threshold = teeth_threshold(fit_bulk_mode(*histogram(coronal.pixels)))
        mask = binarize_and_clean(coronal.pixels, threshold)
    except EmptyMaskError:
        _diagnostic_dump(state, "coronal_mip", coronal.pixels)
        raise
    dumper.dump("coronal_mask", mask)

    # Rows of the coronal image are slices; their mask counts form the z profile
    counts = mask.sum(axis=1).astype(np.float64)
    fit = fit_gaussian(np.arange(len(counts), dtype=np.float64), counts)
    roi_z = roi_slices(fit, windowed.shape[0])
    logger.info(f"ROI slices {roi_z} from fit mu={fit.mu:.2f} sigma={fit.sigma:.2f}")

    if dumper.enabled:
        cfg = state["config"]
        mid = (roi_z[0] + roi_z[1]) // 2
        dumper.dump("soft_tissue", window(state["rescaled"][mid], WindowSpec.of(cfg.soft_tissue_window)))
    return {"roi_fit": fit, "roi_z": roi_z}


@stage("axial_mask")
def axial_mask_node(state: PipelineState) -> Dict[str, Any]:
    try:
        image, threshold, mask = jaw_mask(state["windowed"], state["roi_z"])
    except EmptyMaskError:
        _diagnostic_dump(state, "axial_mip", mip(state["windowed"], "axial", state["roi_z"]).pixels)
        raise
    state["dumper"].dump("axial_mip", image.pixels)
    state["dumper"].dump("axial_mask", mask)
    logger.info(f"Jaw threshold {threshold:.4f}, mask area {int(mask.sum())} px")
    return {"axial_mip": image.pixels, "threshold": threshold, "mask": mask}


@stage("contour")
def contour_node(state: PipelineState) -> Dict[str, Any]:
    contour = extract_contour(state["mask"])
    state["dumper"].dump("contour", draw_contour(state["axial_mip"], contour))
    return {"contour": contour}


@stage("tilt")
def tilt_node(state: PipelineState) -> Dict[str, Any]:
    cfg = state["config"]
    tilt = estimate_tilt(state["contour"])
    logger.info(f"Estimated tilt {tilt.angle_deg:.3f} deg (eigen ratio {tilt.eigen_ratio:.3f})")
    update: Dict[str, Any] = {"tilt": tilt, "residual_tilt": None}

    correctable = abs(tilt.angle_deg) < SynthesisConfig.MAX_TILT_DEG
    if cfg.tilt_correct and tilt.confident and not correctable:
        logger.warning(f"Tilt {tilt.angle_deg:.3f} deg exceeds {SynthesisConfig.MAX_TILT_DEG} deg, left uncorrected")
    if not (cfg.tilt_correct and tilt.confident and correctable and tilt.angle_deg != 0.0):
        update["jaw"] = JawGeometry.from_contour(state["contour"], 0.0, state["roi_z"])
        return update

    rescaled = correct_tilt(state["rescaled"], tilt.angle_deg, cfg.air_level)
    windowed = window(rescaled, WindowSpec.of(cfg.preprocess_window))
    image, _, mask = jaw_mask(windowed, state["roi_z"], state["threshold"])
    contour = extract_contour(mask)
    residual = estimate_tilt(contour)
    logger.info(f"Residual tilt after correction {residual.angle_deg:.3f} deg")
    state["dumper"].dump("corrected_contour", draw_contour(image.pixels, contour))

    update.update(
        rescaled=rescaled,
        windowed=windowed,
        axial_mip=image.pixels,
        mask=mask,
        contour=contour,
        residual_tilt=residual,
        jaw=JawGeometry.from_contour(contour, tilt.angle_deg, state["roi_z"]),
    )
    return update


@stage("trough")
def trough_node(state: PipelineState) -> Dict[str, Any]:
    cfg = state["config"]
    return {"trough": build_trough(state["jaw"], cfg.trough_incisor, cfg.trough_molar)}


@stage("trajectory")
def trajectory_node(state: PipelineState) -> Dict[str, Any]:
    trajectory = build_trajectory(state["jaw"])
    logger.info(f"Trajectory h={trajectory.h:.2f} k={trajectory.k:.2f} a={trajectory.a:.2f} b={trajectory.b:.2f}")
    return {"trajectory": trajectory}


@stage("fan")
def fan_node(state: PipelineState) -> Dict[str, Any]:
    cfg = state["config"]
    fan = build_ray_fan(state["trajectory"], state["trough"], cfg.sweep_deg, cfg.shift_min, cfg.shift_max, cfg.delta)
    state["dumper"].dump("fan", draw_fan(state["axial_mip"], fan))
    return {"fan": fan}


@stage("render")
def render_node(state: PipelineState) -> Dict[str, Any]:
    cfg = state["config"]
    volume = state["volume"]
    render_window = WindowSpec.of(cfg.render_window)
    params = RenderParams(
        beta=cfg.beta, render_window=render_window, delta=cfg.delta, spacing=tuple(volume.spacing[:2])
    )
    sigma = window(state["rescaled"], render_window)
    panorama = render_panorama(sigma, state["fan"], state["roi_z"], params, threads=cfg.threads)
    provenance = _provenance(state, panorama)
    return {"panorama": Panorama(pixels=panorama.pixels, roi_z=panorama.roi_z, provenance=provenance)}


def _provenance(state: PipelineState, panorama: Panorama) -> Dict[str, str]:
    trajectory = state["trajectory"]
    tilt = state["tilt"]
    residual = state.get("residual_tilt")
    values = dict(state["config"].snapshot())
    values.update(
        roi_z=f"{panorama.roi_z[0]},{panorama.roi_z[1]}",
        tilt_deg=f"{tilt.angle_deg:.6f}",
        tilt_confident=str(tilt.confident),
        residual_tilt_deg="-" if residual is None else f"{residual.angle_deg:.6f}",
        trajectory=f"{trajectory.h:.6f},{trajectory.k:.6f},{trajectory.a:.6f},{trajectory.b:.6f}",
        rays=str(panorama.width),
        width=str(panorama.width),
        height=str(panorama.height),
    )
    return values


@stage("write")
def write_node(state: PipelineState) -> Dict[str, Any]:
    cfg = state["config"]
    panorama = state["panorama"]
    state["dumper"].dump("panorama", panorama.pixels)
    if not cfg.output:
        return {"output_path": None}

    path = write_image(cfg.output, panorama.pixels, cfg.bits)
    if cfg.png and path.suffix.lower() != ".png":
        write_image(path.with_suffix(".png"), panorama.pixels, cfg.bits)
    Path(f"{path}.provenance.txt").write_text(format_key_values(panorama.provenance.items()))
    logger.info(f"Wrote panorama {panorama.width}x{panorama.height} to {path}")
    return {"output_path": path}


NODES = {
    "load": load_node,
    "rescale": rescale_node,
    "window": window_node,
    "coronal_roi": coronal_roi_node,
    "axial_mask": axial_mask_node,
    "contour": contour_node,
    "tilt": tilt_node,
    "trough": trough_node,
    "trajectory": trajectory_node,
    "fan": fan_node,
    "render": render_node,
    "write": write_node,
}


def build_graph():
    builder = StateGraph(PipelineState)
    previous = START
    for name in STAGES:
        builder.add_node(name, NODES[name])
        builder.add_edge(previous, name)
        previous = name
    builder.add_edge(previous, END)
    return builder.compile()


# Compiled pipeline graph
panorama_graph = build_graph()


class PanoramaPipeline:
    """Runs the synthesis graph for one configuration"""

    def __init__(self, cfg: PipelineConfig):
        self.logger = logging.getLogger(__name__)
        self.config = cfg.validate()
        if not self.config.input:
            raise ConfigError("an input volume is required")

    def run(self) -> PipelineResult:
        self.logger.info(f"Synthesizing panorama from {self.config.input}")
        initial: PipelineState = {
            "config": self.config,
            "dumper": DebugDumper(self.config.debug_dir),
            "timings": [],
        }
        final = panorama_graph.invoke(initial, config={"recursion_limit": RECURSION_LIMIT})

        timings = pd.DataFrame(final["timings"], columns=["stage", "seconds"])
        self.logger.info("Stage timings:\n" + timings.to_markdown(index=False, floatfmt=".3f"))
        return PipelineResult(
            panorama=final["panorama"],
            jaw=final["jaw"],
            fan=final["fan"],
            output_path=final.get("output_path"),
            timings=timings,
        )


# Convenience function for easy usage
def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Validate the config and run every stage; raises ConfigError or StageError"""
    return PanoramaPipeline(cfg).run()
