import numpy as np
import pytest

from dotshape import config as cfg
from dotshape import grid, transport

from .const import (
    SMALL_A,
    SMALL_B,
    SMALL_CONFIG,
    SMALL_DIRS,
    SMALL_DT_REC,
    SMALL_DX,
    SMALL_G,
    SMALL_N_REC,
    SMALL_NX,
    SMALL_NY,
    SMALL_SUBSTEPS,
)


def pytest_addoption(parser):
    """Register the --runslow flag."""
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run experiment-scale tests"
    )


def pytest_collection_modifyitems(config, items):
    """Skip slow tests unless --runslow is given."""
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def small_grid():
    """16x16 grid fixture."""
    return grid.GridSpec(SMALL_NX, SMALL_NY, SMALL_DX)


@pytest.fixture
def quad8():
    """Eight-direction quadrature fixture."""
    return grid.make_quadrature(SMALL_DIRS)


@pytest.fixture
def small_tg():
    """Short time grid fixture."""
    return grid.TimeGrid(dt_rec=SMALL_DT_REC, n_rec=SMALL_N_REC, substeps=SMALL_SUBSTEPS)


@pytest.fixture
def small_kernel(quad8):
    """Henyey-Greenstein kernel fixture."""
    return transport.hg_kernel(SMALL_G, quad8)


def uniform_medium(spec, a, b):
    """Homogeneous medium without clear or frozen cells."""
    empty = np.zeros(spec.shape, dtype=bool)
    return grid.MediumFields(
        grid=spec,
        a=np.full(spec.shape, a, dtype=float),
        b=np.full(spec.shape, b, dtype=float),
        clear_mask=empty,
        frozen_mask=empty.copy(),
    )


@pytest.fixture
def small_medium(small_grid):
    """Homogeneous scattering medium fixture."""
    return uniform_medium(small_grid, SMALL_A, SMALL_B)


@pytest.fixture
def left_source():
    """Source in the middle of the left side."""
    return transport.SourceSpec(side=grid.Side.LEFT, center=0.8, width_px=3)


@pytest.fixture
def small_config(tmp_path):
    """Small pipeline configuration writing below tmp_path."""
    data = dict(SMALL_CONFIG, output_dir=str(tmp_path / "out"))
    return cfg.config_from_dict(data)
