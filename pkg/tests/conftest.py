import numpy as np
import pytest

from buildingkit.fixtures import make_town


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def town(rng):
    return make_town(rng, n_buildings=40)


def square(cx, cy, side, frame=None):
    """Axis-aligned square ring around (cx, cy); meters when frame given."""
    h = side / 2.0
    ring = np.asarray(
        [
            [cx - h, cy - h],
            [cx + h, cy - h],
            [cx + h, cy + h],
            [cx - h, cy + h],
            [cx - h, cy - h],
        ]
    )
    if frame is not None:
        lon, lat = frame.inverse(ring[:, 0], ring[:, 1])
        ring = np.column_stack([lon, lat])
    return ring
