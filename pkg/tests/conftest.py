import numpy as np
import pytest

from classigraph.images import Image


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def rgb_image(rng):
    return Image.from_rgb(rng.uniform(0.0, 1.0, size=(24, 20, 3)))


@pytest.fixture
def gray_image(rng):
    return Image(rng.uniform(0.0, 1.0, size=(16, 16)))
