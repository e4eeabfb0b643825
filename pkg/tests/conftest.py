import numpy as np
import pytest

from panosynth.phantom import PhantomSpec, generate
from panosynth.volume import write_volume

# Small enough for unit tests, large enough for a 10-tooth arch
SMALL_SPEC = PhantomSpec(dims=(96, 96, 64), arch_axes=(30.0, 32.0), tooth_count=10)


@pytest.fixture(scope="session")
def small_spec():
    return SMALL_SPEC


@pytest.fixture(scope="session")
def small_phantom():
    """(volume, truth) of the small untilted phantom"""
    return generate(SMALL_SPEC, seed=0)


@pytest.fixture(scope="session")
def default_phantom():
    return generate(PhantomSpec(), seed=1)


@pytest.fixture(scope="session")
def default_phantom_file(tmp_path_factory, default_phantom):
    path = tmp_path_factory.mktemp("phantom") / "head.pvol"
    write_volume(default_phantom[0], path)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
