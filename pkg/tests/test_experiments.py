"""Desk-scale reconstruction experiments."""

import numpy as np
import pytest

from dotshape import config as cfg, grid, sensitivity, transport
from dotshape.reconstruction import Reconstructor, run_pipeline

from .const import TRUE_CENTERS

# pylint: disable=redefined-outer-name

pytestmark = [pytest.mark.slow, pytest.mark.timeout(3600)]


def obstacle_mask(config):
    """Union of the configured obstacle discs."""
    spec = config.grid.spec()
    mask = np.zeros(spec.shape, dtype=bool)
    for obstacle in config.phantom.obstacles:
        mask |= grid.disc_mask(spec, tuple(obstacle.center), obstacle.radius)
    return mask


@pytest.fixture(scope="module")
def exp1_config():
    """Three-disc experiment."""
    return cfg.load_preset("exp1")


@pytest.fixture(scope="module")
def exp1_result(exp1_config):
    """Three-disc reconstruction."""
    return run_pipeline(exp1_config)


def test_conservation_at_scale(exp1_config):
    """Test mass accounting on the full grid without absorption."""
    recon = Reconstructor(exp1_config)
    medium = recon.truth.with_absorption(np.zeros(recon.grid.shape))
    source = recon.sources[0]
    flux = transport.forward_solve(medium, recon.kernel, source, recon.time_grid)
    trace = transport.measure(flux, flux.boundary, recon.kernel.quad)
    mass = transport.interior_mass(flux)
    out = transport.cumulative_outflow(trace, recon.grid, recon.time_grid)
    assert np.allclose(mass[1:] + out[1:], source.amplitude, atol=1e-10, rtol=0)


def test_three_discs(exp1_config, exp1_result):
    """Test that the three discs are found in place."""
    shape = exp1_result.shape
    assert shape.count == 3
    for center in TRUE_CENTERS:
        nearest = min(np.hypot(c.centroid[0] - center[0], c.centroid[1] - center[1]) for c in shape.components)
        assert nearest <= 3 * exp1_config.grid.dx, center

    truth = obstacle_mask(exp1_config)
    found = shape.mask
    jaccard = np.count_nonzero(truth & found) / np.count_nonzero(truth | found)
    assert jaccard >= 0.5


def test_contrast_mismatch(exp1_result):
    """Test that a 10% contrast error barely moves the shape."""
    exp2 = run_pipeline(cfg.load_preset("exp2"))
    differ = np.count_nonzero(exp1_result.shape.mask != exp2.shape.mask)
    assert differ <= 0.05 * exp1_result.shape.mask.size


def test_deterministic_threads(exp1_config, exp1_result):
    """Test that the worker count does not change the result."""
    pooled = run_pipeline(cfg.with_overrides(exp1_config, {"threads": 4}))
    serial = exp1_result
    if exp1_config.threads != 1:
        serial = run_pipeline(cfg.with_overrides(exp1_config, {"threads": 1}))
    assert pooled.history == serial.history
    assert np.array_equal(pooled.shape.mask, serial.shape.mask)
    assert np.array_equal(pooled.state.phi, serial.state.phi)


def test_varying_absorption_residual():
    """Test that the level set sweeps reduce the residual."""
    result = run_pipeline(cfg.load_preset("exp3"))
    norms = [norm for phase, _, norm in result.sweep_norms if phase == "levelset"]
    assert len(norms) == 10
    for before, after in zip(norms[1:], norms[2:]):
        assert after <= 1.1 * before
    assert norms[-1] <= 0.5 * result.initial_norm


def test_early_arrival_in_clear_layer():
    """Test that early arrivals are more sensitive to the clear layer."""
    config = cfg.load_preset("fig1")
    spec = config.grid.spec()
    recon = Reconstructor(config)
    tg = config.solver.time_grid(config.sensitivity.n_rec)
    source, requests = sensitivity.configured_requests(config, grid.build_boundary(spec))
    early, late = sensitivity.sensitivity_batch(
        recon.truth, recon.kernel, source, requests, tg, threads=config.threads
    )
    clear = recon.truth.clear_mask
    assert early.t_r < late.t_r
    assert sensitivity.clear_layer_fraction(early.values, clear) > sensitivity.clear_layer_fraction(
        late.values, clear
    )
