import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from boundaryshape.codebook import ModelParams, build_model
from boundaryshape.synthetic import generate_scene

settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def disc_scenes():
    """Small fixed synthetic set shared by the heavier tests."""
    return [generate_scene("disc", seed=7, index=i) for i in range(11)]


@pytest.fixture(scope="session")
def disc_split(disc_scenes):
    return disc_scenes[:8], disc_scenes[8:]


@pytest.fixture(scope="session")
def disc_model(disc_split):
    train, _ = disc_split
    return build_model(
        [s.image for s in train], [s.mask for s in train], ModelParams()
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(42)
