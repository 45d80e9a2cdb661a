import numpy as np
import pytest

from cbstyle.image import Frame


def random_frame(rng: np.random.Generator, height: int, width: int) -> Frame:
    return Frame(rng.random((height, width, 3)))


def frames_equal(a: Frame, b: Frame) -> bool:
    return a.pixels.shape == b.pixels.shape and np.array_equal(a.pixels, b.pixels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
