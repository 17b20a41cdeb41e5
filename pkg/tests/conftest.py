import numpy as np
import pytest

from smoothcam import build_fixture, detector_scene


@pytest.fixture
def random_model():
    return build_fixture("random", seed=7)


@pytest.fixture
def detector_model():
    return build_fixture("detector")


@pytest.fixture
def scene_top_left():
    return detector_scene("top-left")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
