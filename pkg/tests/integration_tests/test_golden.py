"""Byte-level regression of the standard phantom panorama.

The golden image is written on the first run; delete it to accept a
deliberate rendering change.
"""

import shutil
from pathlib import Path

import pytest

from panosynth.config import PipelineConfig
from panosynth.debug import read_image
from panosynth.metrics import compare_images
from panosynth.phantom import PhantomSpec, generate
from panosynth.pipeline import run_pipeline
from panosynth.volume import write_volume

GOLDEN = Path(__file__).parent / "golden" / "standard_phantom_seed42.pgm"
SEED = 42


def _render_standard_phantom(workdir: Path) -> Path:
    workdir.mkdir(parents=True, exist_ok=True)
    volume, _ = generate(PhantomSpec(), seed=SEED)
    path = workdir / "standard.pvol"
    write_volume(volume, path)
    result = run_pipeline(PipelineConfig(input=str(path), output=str(workdir / "pano.pgm"), debug_dir=None, threads=1))
    return result.output_path


@pytest.mark.slow
def test_standard_phantom_matches_golden_panorama(tmp_path) -> None:
    first = _render_standard_phantom(tmp_path / "first")
    if not GOLDEN.is_file():
        GOLDEN.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(first, GOLDEN)

    second = _render_standard_phantom(tmp_path / "second")
    assert first.read_bytes() == second.read_bytes()
    assert second.read_bytes() == GOLDEN.read_bytes()
    assert compare_images(read_image(GOLDEN), read_image(second)).ssim == 1.0
