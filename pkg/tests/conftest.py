import numpy as np
import pytest

from bevlane import AnchorGridSpec, SceneSpec, encode_gt, make_scene


@pytest.fixture(scope="session")
def default_grid():
    return AnchorGridSpec.default()


def _scene(profile, seed=0, **kw):
    return make_scene(SceneSpec(profile=profile, seed=seed, **kw))


@pytest.fixture(scope="session")
def flat_scene():
    return _scene("flat", seed=0)


@pytest.fixture(scope="session")
def uphill_scene():
    return _scene("uphill", seed=5)


@pytest.fixture(scope="session")
def downhill_scene():
    return _scene("downhill", seed=9)


@pytest.fixture(scope="session")
def bend_scene():
    return _scene("bend", seed=4)


@pytest.fixture(scope="session")
def fork_scene():
    return _scene("fork", seed=2)


@pytest.fixture(scope="session")
def curb_scene():
    return _scene("curb", seed=6)


@pytest.fixture(scope="session")
def uphill_encoded(uphill_scene, default_grid):
    return encode_gt(uphill_scene.lanes_bev, default_grid)


@pytest.fixture(scope="session")
def flat_encoded(flat_scene, default_grid):
    return encode_gt(flat_scene.lanes_bev, default_grid)


def gauge_transform(z, height_m, ref_value):
    """Rescale a height profile so the entry equal to ref_value maps to zero.

    The weak losses cannot tell profiles apart under z -> h - lam*(h - z);
    comparisons between differently anchored solutions must first map both
    into one gauge.
    """
    lam = height_m / (height_m - ref_value)
    return height_m - lam * (height_m - np.asarray(z, dtype=float))
