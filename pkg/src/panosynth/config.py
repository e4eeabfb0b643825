"""
Configuration module for the panorama synthesis pipeline.
Centralizes all default constants, environment variable handling and the
key=value pipeline config file.
"""

import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from .errors import ConfigError

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer {name}={raw!r}")
        return default


class SynthesisConfig:
    """Default constants and environment overrides for the synthesis system"""

    # Windowing (rescaled, HU-like units)
    PREPROCESS_WINDOW: Tuple[float, float] = (225.0, 3096.0)
    RENDER_WINDOW: Tuple[float, float] = (-175.0, 3096.0)
    SOFT_TISSUE_WINDOW: Tuple[float, float] = (-125.0, 225.0)
    AIR_LEVEL: float = -1000.0

    # Ray fan
    SWEEP_DEG: float = 180.0
    SHIFT_MIN_DEG: float = 0.4
    SHIFT_MAX_DEG: float = 0.8
    DELTA_VOXELS: float = 0.5

    # Focal trough thickness (voxels)
    TROUGH_INCISOR: float = 10.0
    TROUGH_MOLAR: float = 6.0

    # Beer-Lambert correction factor per unit windowed intensity per mm
    BETA: float = 0.02

    # Jaw detection
    HISTOGRAM_BINS: int = 256
    TILT_ISOTROPY_RATIO: float = 1.05
    MAX_TILT_DEG: float = 45.0

    # Gaussian fit
    FIT_MAX_STEPS: int = 100
    FIT_TOLERANCE: float = 1e-6

    # Output
    OUTPUT_BITS: int = 8

    # Runtime (environment overridable)
    THREADS: int = _env_int("PANOSYNTH_THREADS", 1)
    DEBUG_DIR: Optional[str] = os.getenv("PANOSYNTH_DEBUG_DIR") or None
    LOG_FILE: str = os.getenv("PANOSYNTH_LOG_FILE", "panorama_synthesis.log")
    LOG_LEVEL: str = os.getenv("PANOSYNTH_LOG_LEVEL", "INFO")

    @classmethod
    def validate_config(cls) -> bool:
        """Validate that the environment-derived values are usable"""
        problems = []
        if cls.THREADS < 1:
            problems.append(f"PANOSYNTH_THREADS must be >= 1 (got {cls.THREADS})")
        if logging.getLevelName(cls.LOG_LEVEL.upper()) == f"Level {cls.LOG_LEVEL.upper()}":
            problems.append(f"PANOSYNTH_LOG_LEVEL is not a logging level ({cls.LOG_LEVEL})")

        if problems:
            for problem in problems:
                logger.error(problem)
            return False

        return True

    @classmethod
    def print_config_summary(cls) -> None:
        """Log a summary of the current defaults"""
        logger.info("Current defaults:")
        logger.info(f"  Preprocess window: {cls.PREPROCESS_WINDOW}")
        logger.info(f"  Render window: {cls.RENDER_WINDOW}")
        logger.info(f"  Sweep: {cls.SWEEP_DEG} deg, shift {cls.SHIFT_MIN_DEG}-{cls.SHIFT_MAX_DEG} deg")
        logger.info(f"  Delta: {cls.DELTA_VOXELS} voxels, beta: {cls.BETA}")
        logger.info(f"  Trough: incisor {cls.TROUGH_INCISOR}, molar {cls.TROUGH_MOLAR}")
        logger.info(f"  Threads: {cls.THREADS}, debug dir: {cls.DEBUG_DIR or '-'}")


# Global configuration instance
config = SynthesisConfig()


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of one synthesis run"""

    input: Optional[str] = None
    output: Optional[str] = None
    preprocess_window: Tuple[float, float] = SynthesisConfig.PREPROCESS_WINDOW
    render_window: Tuple[float, float] = SynthesisConfig.RENDER_WINDOW
    soft_tissue_window: Tuple[float, float] = SynthesisConfig.SOFT_TISSUE_WINDOW
    air_level: float = SynthesisConfig.AIR_LEVEL
    sweep_deg: float = SynthesisConfig.SWEEP_DEG
    shift_min: float = SynthesisConfig.SHIFT_MIN_DEG
    shift_max: float = SynthesisConfig.SHIFT_MAX_DEG
    delta: float = SynthesisConfig.DELTA_VOXELS
    beta: float = SynthesisConfig.BETA
    trough_incisor: float = SynthesisConfig.TROUGH_INCISOR
    trough_molar: float = SynthesisConfig.TROUGH_MOLAR
    tilt_correct: bool = True
    debug_dir: Optional[str] = field(default_factory=lambda: config.DEBUG_DIR)
    threads: int = field(default_factory=lambda: config.THREADS)
    bits: int = SynthesisConfig.OUTPUT_BITS
    png: bool = False

    @classmethod
    def keys(cls) -> Tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_file(cls, path: str) -> "PipelineConfig":
        """Read a key=value config file on top of the defaults"""
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {path}")

        values: Dict[str, str] = {}
        for key, value in dotenv_values(config_path, interpolate=False).items():
            if value is None:
                raise ConfigError(f"{path}: expected key=value, got {key!r}")
            values[key.replace("-", "_")] = value

        return cls().with_overrides(values)

    def with_overrides(self, overrides: Dict[str, Any]) -> "PipelineConfig":
        """Return a copy with the given keys replaced; string values are parsed"""
        known = set(self.keys())
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

        parsed = {}
        for key, value in overrides.items():
            if value is None:
                continue
            parsed[key] = _coerce(key, value, getattr(self, key))
        return replace(self, **parsed)

    def validate(self) -> "PipelineConfig":
        """Check every numeric precondition of the downstream modules"""
        for name in ("preprocess_window", "render_window", "soft_tissue_window"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"{name}: lower bound {lo} must be below upper bound {hi}")
        if not 0.0 < self.sweep_deg <= 180.0:
            raise ConfigError(f"sweep_deg must be in (0, 180], got {self.sweep_deg}")
        if not 0.0 < self.shift_min <= self.shift_max:
            raise ConfigError(
                f"shift range must satisfy 0 < shift_min <= shift_max, got {self.shift_min}, {self.shift_max}"
            )
        if self.delta <= 0.0:
            raise ConfigError(f"delta must be > 0, got {self.delta}")
        if self.beta <= 0.0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if not self.trough_incisor >= self.trough_molar > 0.0:
            raise ConfigError(
                f"trough thickness must satisfy incisor >= molar > 0, got {self.trough_incisor}, {self.trough_molar}"
            )
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.bits not in (8, 16):
            raise ConfigError(f"bits must be 8 or 16, got {self.bits}")
        return self

    def snapshot(self) -> Dict[str, str]:
        """Stable key=value view used for provenance sidecars; runtime-only keys are left out"""
        return {key: _format_value(getattr(self, key)) for key in self.keys() if key not in ("debug_dir", "threads")}


def _coerce(key: str, value: Any, current: Any) -> Any:
    if not isinstance(value, str):
        return value
    text = value.strip()
    try:
        if isinstance(current, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(current, tuple):
            parts = [p for p in text.replace(",", " ").split() if p]
            if len(parts) != 2:
                raise ValueError(text)
            return (float(parts[0]), float(parts[1]))
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None
    return text or None


def _format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_key_values(items: Iterable[Tuple[str, Any]]) -> str:
    """Render key=value lines, one per item"""
    return "".join(f"{key}={value}\n" for key, value in items)


# Convenience functions
def get_default_config() -> PipelineConfig:
    """Get a pipeline config with every default applied"""
    return PipelineConfig()
