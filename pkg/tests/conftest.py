import math

import numpy as np
import pytest

from forestnav.tta import CostMap, TtaConfig
from forestnav.worldgen import TerrainParams, generate_world


@pytest.fixture(scope="session")
def flat_world():
    params = TerrainParams(amplitude=0.0, tree_density=0.0, seed=7)
    return generate_world(params, (40.0, 40.0))


@pytest.fixture(scope="session")
def small_forest():
    params = TerrainParams(seed=11, tree_density=1.0 / 50.0, amplitude=1.5)
    return generate_world(params, (40.0, 40.0))


def smooth_random_map(rng, shape=(48, 48), cell=0.2, origin=(0.0, 0.0),
                      smooth=2, scale=1.0) -> CostMap:
    """Random nonnegative cost grid with a bit of spatial correlation."""
    from scipy import ndimage

    raw = rng.uniform(0.0, scale, size=shape)
    c_map = ndimage.gaussian_filter(raw, smooth) + 0.05 * scale
    zeros = np.zeros(shape)
    return CostMap(
        elevation=zeros,
        slope=zeros,
        roughness=zeros,
        v_c=np.zeros(shape, dtype=np.uint8),
        d_t=np.full(shape, 6.0),
        c_map=c_map,
        cell_size=cell,
        origin=origin,
        config=TtaConfig(),
    )


def constant_map(value, shape=(48, 48), cell=0.2, origin=(0.0, 0.0)) -> CostMap:
    zeros = np.zeros(shape)
    return CostMap(
        elevation=zeros,
        slope=zeros,
        roughness=zeros,
        v_c=np.zeros(shape, dtype=np.uint8),
        d_t=np.full(shape, 6.0),
        c_map=np.full(shape, float(value)),
        cell_size=cell,
        origin=origin,
        config=TtaConfig(),
    )
