import logging

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from epifocus.constants import LOGGER_NAME
from epifocus.geometry import CircularGeometry, DetectorSpec, circular_trajectory
from epifocus.phantom import Ellipsoid, Phantom, VolumeGrid

settings.register_profile('fast', max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile('fast')


@pytest.fixture(autouse=True)
def propagating_logs():
    yield
    logger = logging.getLogger(LOGGER_NAME)
    logger.handlers.clear()
    logger.setLevel(logging.NOTSET)
    logger.propagate = True


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run end-to-end experiments')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def small_geometry():
    return CircularGeometry(sid=300.0, sdd=600.0, n_views=36, detector=DetectorSpec(nu=64, nv=48, du=2.0, dv=2.0))


@pytest.fixture
def small_traj(small_geometry):
    return circular_trajectory(small_geometry)


@pytest.fixture
def small_phantom():
    return Phantom(ellipsoids=[
        Ellipsoid(semi_axes=(24.0, 27.0, 18.0), density=0.5),
        Ellipsoid(semi_axes=(21.0, 24.0, 15.0), density=-0.3),
        Ellipsoid(center=(-8.0, 6.0, 0.0), semi_axes=(4.0, 4.0, 4.0), density=0.1),
        Ellipsoid(center=(8.0, -8.0, 2.0), semi_axes=(3.0, 3.0, 3.0), density=-0.1),
    ])


@pytest.fixture
def small_grid():
    return VolumeGrid.centered((32, 32, 16), (2.0, 2.0, 2.0))


@pytest.fixture
def small_markers():
    h = 12.0
    corners = [(x, y, z) for x in (-h, h) for y in (-h, h) for z in (-h, h)]
    return np.array(corners + [(0.0, 0.0, 0.0)])
