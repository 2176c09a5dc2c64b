import random

import pytest

from mitoforge.geometry import BBox


def random_box(rng: random.Random, extent: float = 100.0, max_size: float = 40.0) -> BBox:
    x = rng.uniform(0, extent - 1)
    y = rng.uniform(0, extent - 1)
    w = rng.uniform(1.0, max_size)
    h = rng.uniform(1.0, max_size)
    return BBox(x, y, x + w, y + h)


@pytest.fixture
def rng():
    return random.Random(1234)
