import numpy as np
import pytest

from volsplat import phantoms
from volsplat.volume import build_occupancy


@pytest.fixture(scope="session")
def sphere_scene():
    vol, preset = phantoms.sphere_scene(32)
    occ = build_occupancy(vol, preset, 4)
    return vol, preset, occ


@pytest.fixture(scope="session")
def sphere_scene_64():
    vol, preset = phantoms.sphere_scene(64)
    occ = build_occupancy(vol, preset, 4)
    return vol, preset, occ


def make_homogeneous_cube(side=1.0, sigma=2.0, n=8, albedo=0.5, color=(1.0, 0.9, 0.8)):
    """Constant-extinction cube phantom with its exact extinction value."""
    from volsplat.volume import Preset, TransferFunction, VolumeGrid
    data = np.ones((n, n, n))
    vol = VolumeGrid.from_array(data, spacing=(side / n,) * 3,
                                origin=(-side / 2 + side / (2 * n),) * 3)
    tf = TransferFunction.from_nodes(
        [(0.0, color, 1.0), (1.0, color, 1.0)], density_scale=sigma)
    preset = Preset(tf, scatter_albedo=albedo)
    return vol, preset


@pytest.fixture(scope="session")
def homogeneous_cube():
    return make_homogeneous_cube()
