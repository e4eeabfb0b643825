#!/usr/bin/env python3
"""
Panorama Synthesis Runner

Subcommands:
1. synthesize: CBCT volume file -> panoramic image (+ provenance sidecar)
2. phantom:    parametric head phantom -> volume file + ground-truth sidecar
3. compare:    two panoramas -> SSIM / PSNR as key=value lines

Usage:
    python run_synthesis.py synthesize --input head.pvol --output pano.pgm
    python run_synthesis.py synthesize --input head.pvol --output pano.pgm --sweep-deg 90 --threads 4
    python run_synthesis.py phantom --output head.pvol --teeth 16 --missing 3,10 --tilt 7 --seed 1
    python run_synthesis.py compare pano_a.pgm pano_b.pgm

Exit codes: 0 success, 1 pipeline stage failure, 2 usage or validation error.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

# Add the src directory to Python path for proper imports
src_dir = os.path.join(os.path.dirname(__file__), "..")
sys.path.insert(0, src_dir)

from panosynth.config import PipelineConfig, config, format_key_values
from panosynth.debug import read_image
from panosynth.errors import ConfigError, MetricError, PanoramaError, PhantomError, RenderError, StageError
from panosynth.metrics import compare_images
from panosynth.phantom import PhantomSpec, generate, write_truth
from panosynth.pipeline import run_pipeline
from panosynth.volume import write_volume

# Exit codes
EXIT_OK = 0
EXIT_STAGE_FAILURE = 1
EXIT_USAGE = 2

# UI Messages
UI_MESSAGES = {
    "synthesizing": "Synthesizing panorama from '{}'",
    "phantom_written": "Phantom written to '{}' (truth: '{}')",
}

ERROR_MESSAGES = {
    "config_failed": "Configuration validation failed: {}",
    "check_env": "Please check the PANOSYNTH_* variables in your environment or .env file.",
    "stage_failed": "Pipeline failed in stage '{}': {}",
    "phantom_failed": "Invalid phantom specification: {}",
    "compare_failed": "Cannot compare images: {}",
    "invalid_list": "Expected a comma-separated list of {} values, got '{}'",
}

# Command-line flag -> PipelineConfig key
OVERRIDE_FLAGS = (
    "sweep_deg",
    "shift_min",
    "shift_max",
    "beta",
    "delta",
    "trough_incisor",
    "trough_molar",
    "debug_dir",
    "threads",
    "bits",
)


def _int_list(text: str) -> List[int]:
    if not text.strip():
        return []
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(ERROR_MESSAGES["invalid_list"].format("integer", text)) from None


def _float_tuple(count: int):
    def parse(text: str) -> Tuple[float, ...]:
        try:
            values = tuple(float(part) for part in text.split(","))
        except ValueError:
            values = ()
        if len(values) != count:
            raise argparse.ArgumentTypeError(ERROR_MESSAGES["invalid_list"].format(count, text))
        return values

    return parse


def _dims(text: str) -> Tuple[int, int, int]:
    try:
        values = tuple(int(part) for part in text.split(","))
    except ValueError:
        values = ()
    if len(values) != 3:
        raise argparse.ArgumentTypeError(ERROR_MESSAGES["invalid_list"].format(3, text))
    return values


def _create_argument_parser() -> argparse.ArgumentParser:
    """Create and configure the argument parser.

    Returns:
        Configured ArgumentParser instance
    """
    parser = argparse.ArgumentParser(
        description="Panorama Synthesis - panoramic dental X-rays from CBCT volumes",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python run_synthesis.py synthesize --input head.pvol --output pano.pgm
  python run_synthesis.py phantom --output head.pvol --teeth 16 --seed 1
  python run_synthesis.py compare a.pgm b.pgm
        """,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    synthesize = subparsers.add_parser("synthesize", help="Render a panorama from a volume file")
    synthesize.add_argument("--input", required=True, help="PVOL1 volume file")
    synthesize.add_argument("--output", required=True, help="Output image (.pgm or .png)")
    synthesize.add_argument("--config", help="key=value config file applied before the flags")
    synthesize.add_argument("--sweep-deg", type=float, help="Total angular sweep of the ray fan")
    synthesize.add_argument("--shift-min", type=float, help="Angular step at the apex (deg)")
    synthesize.add_argument("--shift-max", type=float, help="Angular step at the sweep ends (deg)")
    synthesize.add_argument("--beta", type=float, help="Beer-Lambert correction factor")
    synthesize.add_argument("--delta", type=float, help="Sample step along a ray (voxels)")
    synthesize.add_argument("--trough-incisor", type=float, help="Trough thickness at the incisors (voxels)")
    synthesize.add_argument("--trough-molar", type=float, help="Trough thickness at the molars (voxels)")
    synthesize.add_argument("--no-tilt-correct", action="store_true", help="Skip in-plane tilt correction")
    synthesize.add_argument("--debug-dir", help="Write numbered intermediate images here")
    synthesize.add_argument("--threads", type=int, help=f"Render worker threads (default: {config.THREADS})")
    synthesize.add_argument("--bits", type=int, choices=(8, 16), help="Output bit depth")
    synthesize.add_argument("--png", action="store_true", help="Also write a PNG copy")

    phantom = subparsers.add_parser("phantom", help="Generate a synthetic head phantom")
    phantom.add_argument("--output", required=True, help="Output PVOL1 volume file")
    phantom.add_argument("--truth", help="Truth sidecar (default: <output>.truth.txt)")
    phantom.add_argument("--teeth", type=int, default=16, help="Number of teeth on the arch")
    phantom.add_argument("--missing", type=_int_list, default=[], help="Comma-separated missing tooth indices")
    phantom.add_argument("--implants", type=_int_list, default=[], help="Comma-separated implant tooth indices")
    phantom.add_argument("--tilt", type=float, default=0.0, help="In-plane jaw tilt (deg)")
    phantom.add_argument("--seed", type=int, default=0, help="Texture and root-length seed")
    phantom.add_argument("--dims", type=_dims, default=PhantomSpec.dims, help="nx,ny,nz")
    phantom.add_argument("--spacing", type=_float_tuple(3), default=PhantomSpec.spacing, help="sx,sy,sz in mm")
    phantom.add_argument("--arch", type=_float_tuple(2), default=PhantomSpec.arch_axes, help="Arch half-axes a,b in mm")
    phantom.add_argument("--texture", type=float, default=PhantomSpec.texture_hu, help="Tissue texture amplitude")

    compare = subparsers.add_parser("compare", help="SSIM and PSNR of two panoramas")
    compare.add_argument("first", help="First image")
    compare.add_argument("second", help="Second image")

    return parser


def _configure_logging() -> None:
    """Configure logging - file only, no console output"""
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.FileHandler(config.LOG_FILE)],
    )


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    overrides: Dict[str, object] = {"input": args.input, "output": args.output}
    for key in OVERRIDE_FLAGS:
        overrides[key] = getattr(args, key)
    if args.no_tilt_correct:
        overrides["tilt_correct"] = False
    if args.png:
        overrides["png"] = True
    return cfg.with_overrides(overrides).validate()


def synthesize_command(args: argparse.Namespace) -> int:
    logger = logging.getLogger(__name__)
    try:
        cfg = _pipeline_config(args)
    except ConfigError as e:
        print(ERROR_MESSAGES["config_failed"].format(e), file=sys.stderr)
        return EXIT_USAGE

    logger.info(UI_MESSAGES["synthesizing"].format(cfg.input))
    try:
        result = run_pipeline(cfg)
    except ConfigError as e:
        print(ERROR_MESSAGES["config_failed"].format(e), file=sys.stderr)
        return EXIT_USAGE
    except StageError as e:
        print(ERROR_MESSAGES["stage_failed"].format(e.stage, e.cause), file=sys.stderr)
        return EXIT_STAGE_FAILURE

    panorama = result.panorama
    summary = [
        ("output", str(result.output_path)),
        ("width", panorama.width),
        ("height", panorama.height),
        ("roi_z", panorama.provenance.get("roi_z", "")),
        ("tilt_deg", panorama.provenance.get("tilt_deg", "")),
    ]
    sys.stdout.write(format_key_values(summary))
    return EXIT_OK


def phantom_command(args: argparse.Namespace) -> int:
    logger = logging.getLogger(__name__)
    try:
        spec = PhantomSpec(
            dims=tuple(args.dims),
            spacing=tuple(args.spacing),
            arch_axes=tuple(args.arch),
            tooth_count=args.teeth,
            missing_teeth=frozenset(args.missing),
            implant_teeth=frozenset(args.implants),
            tilt_deg=args.tilt,
            texture_hu=args.texture,
        )
        volume, truth = generate(spec, seed=args.seed)
    except PhantomError as e:
        print(ERROR_MESSAGES["phantom_failed"].format(e), file=sys.stderr)
        return EXIT_USAGE

    output = Path(args.output)
    truth_path = Path(args.truth) if args.truth else Path(f"{output}.truth.txt")
    output.parent.mkdir(parents=True, exist_ok=True)
    write_volume(volume, output)
    write_truth(truth, truth_path)
    logger.info(UI_MESSAGES["phantom_written"].format(output, truth_path))
    sys.stdout.write(format_key_values([("volume", output), ("truth", truth_path)]))
    return EXIT_OK


def compare_command(args: argparse.Namespace) -> int:
    try:
        report = compare_images(read_image(args.first), read_image(args.second))
    except (MetricError, RenderError) as e:
        print(ERROR_MESSAGES["compare_failed"].format(e), file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.write(format_key_values(report.to_key_values().items()))
    return EXIT_OK


COMMANDS = {
    "synthesize": synthesize_command,
    "phantom": phantom_command,
    "compare": compare_command,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one subcommand and return its exit code"""
    _configure_logging()
    logger = logging.getLogger(__name__)
    logger.info("Starting Panorama Synthesis Runner")

    # Validate configuration before proceeding
    if not config.validate_config():
        print(ERROR_MESSAGES["config_failed"].format("environment"), file=sys.stderr)
        print(ERROR_MESSAGES["check_env"], file=sys.stderr)
        return EXIT_USAGE
    config.print_config_summary()

    parser = _create_argument_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        return COMMANDS[args.command](args)
    except PanoramaError as e:
        logger.error(f"Application failed: {e}", exc_info=True)
        print(f"Application failed: {e}", file=sys.stderr)
        return EXIT_STAGE_FAILURE


if __name__ == "__main__":
    sys.exit(main())
