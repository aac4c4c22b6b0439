"""Reconstruction driver tests."""

import math

import numpy as np
import pytest

from dotshape import config as cfg
from dotshape import grid, reconstruction, transport
from dotshape.levelset import ShapeParams
from dotshape.tbt import ResidualEntry

# pylint: disable=redefined-outer-name


@pytest.fixture
def recon(small_config):
    """Reconstructor of the small configuration."""
    return reconstruction.Reconstructor(small_config)


@pytest.fixture
def data_set(recon):
    """Synthetic data of the small configuration."""
    return recon.generate()


def test_residual_norm_brute_force():
    """Test the all-source norm on a three-receiver toy."""
    values = np.array([[1.0, 2.0], [0.0, -1.0], [3.0, 0.5]])
    trace = transport.BoundaryFluxTrace(
        values=values,
        arc=np.array([0.1, 0.2, 0.3]),
        times=np.array([0.5, 1.0]),
        dt_rec=0.5,
        receivers=np.ones(3, dtype=bool),
        window=np.ones(2, dtype=bool),
    )
    brute = math.sqrt(2 * sum(v * v * 0.5 for v in values.ravel()))
    assert reconstruction.residual_norm([trace, trace]) == pytest.approx(brute)
    assert reconstruction.residual_norm([trace.scaled(0.0)]) == 0.0
    assert reconstruction.residual_norm([]) == 0.0


def test_sweep_norms():
    """Test aggregation of the step history per sweep."""
    history = [
        ResidualEntry("tbt", 1, 0, 0, 3.0),
        ResidualEntry("tbt", 1, 1, 1, 4.0),
        ResidualEntry("tbt", 2, 2, 0, 1.0),
        ResidualEntry("levelset", 1, 0, 0, 2.0),
    ]
    assert reconstruction.sweep_norms(history) == [
        ("tbt", 1, 5.0),
        ("tbt", 2, 1.0),
        ("levelset", 1, 2.0),
    ]


def test_generate_data(recon, data_set):
    """Test one restricted trace per source."""
    assert len(data_set) == len(recon.sources) == 4
    for index, data in enumerate(data_set):
        assert data.index == index
        assert data.observed.window.sum() == 15
        assert not data.observed.values[~data.observed.support].any()
        assert data.observed.values.max() > 0


def test_data_of_truth_fit_exactly(recon, data_set):
    """Test that the true medium has zero residual."""
    norm = reconstruction.all_source_norm(recon.truth, recon.kernel, data_set, recon.time_grid)
    assert norm == 0.0
    assert reconstruction.all_source_norm(
        recon.background, recon.kernel, data_set, recon.time_grid
    ) > 0.0


def test_generate_threads_identical(recon):
    """Test that worker count does not change the data."""
    single = recon.generate(threads=1)
    many = recon.generate(threads=4)
    for one, other in zip(single, many):
        assert one.index == other.index
        assert np.array_equal(one.observed.values, other.observed.values)


@pytest.mark.asyncio
async def test_generate_async(recon, data_set):
    """Test the coroutine variant returns data in source order."""
    result = await reconstruction.generate_data_async(
        recon.truth,
        recon.kernel,
        recon.sources,
        recon.time_grid,
        recon.config.receivers.min_arc,
        tuple(recon.config.receivers.window),
        threads=3,
    )
    assert [d.index for d in result] == [0, 1, 2, 3]
    for one, other in zip(result, data_set):
        assert np.array_equal(one.observed.values, other.observed.values)


def test_levelset_step_zero_residual(recon):
    """Test that data of the current shape leave phi unchanged."""
    phi = np.ones(recon.grid.shape)
    phi[6:10, 6:10] = -1.0
    params = ShapeParams(a_hat=0.5, a_b=recon.background.a)
    state = reconstruction.ReconstructionState(params=params, background=recon.background, phi=phi)
    medium = state.medium
    data = reconstruction.source_data(
        0, recon.sources[0], medium, recon.kernel, recon.time_grid, 1.0, (1.0, 4.0)
    )
    reconstruction.levelset_step(state, data, recon.kernel, recon.time_grid)
    assert np.array_equal(state.phi, phi)
    assert state.history[-1].norm == 0.0
    assert state.history[-1].phase == "levelset"


def test_levelset_step_two_valued(recon, data_set):
    """Test that a step keeps a two-valued absorption."""
    phi = np.ones(recon.grid.shape)
    phi[6:10, 6:10] = -1.0
    params = ShapeParams(a_hat=0.5, a_b=recon.background.a)
    state = reconstruction.ReconstructionState(params=params, background=recon.background, phi=phi)
    reconstruction.levelset_step(state, data_set[0], recon.kernel, recon.time_grid)
    assert state.eta is not None and state.eta > 0
    assert set(np.unique(state.a)) <= {0.1, 0.5}
    if (state.phi <= 0).any():
        assert state.phi.min() == pytest.approx(-1.0)


def test_pipeline_history_and_snapshots(recon, data_set):
    """Test history length, snapshots and result fields."""
    labels = []
    recon.snapshot_cb.append(lambda snap: labels.append(snap.label))
    result = recon.run(data_set)

    assert len(result.history) == 2 * len(data_set)
    assert [e.phase for e in result.history] == ["tbt"] * 4 + ["levelset"] * 4
    assert [n[:2] for n in result.sweep_norms] == [("tbt", 1), ("levelset", 1)]
    assert labels == ["tbt_sweep01", "ls_init", "ls_step002", "final"]
    assert result.initial_norm > 0
    assert result.derived["substeps"] == 4
    assert result.derived["courant"] == pytest.approx(0.5)
    assert set(np.unique(result.state.a)) <= {0.1, 0.5}
    assert np.array_equal(result.shape.mask, result.state.phi <= 0)


def test_pipeline_without_levelset_sweeps(small_config, data_set):
    """Test that zero level set sweeps return the initial shape."""
    config = cfg.with_overrides(small_config, {"inversion.ls_sweeps": 0})
    result = reconstruction.Reconstructor(config).run(data_set)
    assert np.array_equal(result.state.phi, result.phi_init)
    assert all(e.phase == "tbt" for e in result.history)


def test_failing_callback_tolerated(recon, data_set, caplog):
    """Test that a raising snapshot callback does not stop the run."""
    seen = []

    def broken(snapshot):
        raise RuntimeError("disk full")

    recon.snapshot_cb.extend([broken, lambda snap: seen.append(snap.label)])
    recon.run(data_set)
    assert "final" in seen
    assert "Snapshot callback error: disk full" in caplog.text


def test_deterministic_history(small_config):
    """Test bit-identical histories across runs and worker counts."""
    first = reconstruction.run_pipeline(small_config)
    other = reconstruction.run_pipeline(cfg.with_overrides(small_config, {"threads": 4}))
    assert [e.norm for e in first.history] == [e.norm for e in other.history]
    assert np.array_equal(first.state.phi, other.state.phi)


def test_known_shape_is_stationary(recon, data_set):
    """Test that a sweep started at the true shape keeps it."""
    truth = grid.disc_mask(recon.grid, (0.8, 0.8), 0.25)
    phi = np.where(truth, -1.0, 1.0)
    state = reconstruction.ReconstructionState(
        params=recon.shape_params(), background=recon.background, phi=phi
    )
    recon.run_levelset(state, data_set)
    changed = np.count_nonzero((state.phi <= 0) != truth)
    assert changed <= 0.02 * truth.size
    assert [e.norm for e in state.history] == [0.0] * len(data_set)


def test_levelset_step_lowers_residual(recon, data_set):
    """Test that one step from inside the true disc lowers that source's residual."""
    truth = grid.disc_mask(recon.grid, (0.8, 0.8), 0.25)
    seed = grid.disc_mask(recon.grid, (0.8, 0.8), 0.15)
    assert seed.sum() == 4 and truth.sum() == 16
    phi = np.where(seed, -1.0, np.where(truth, 0.05, 10.0))
    state = reconstruction.ReconstructionState(
        params=recon.shape_params(), background=recon.background, phi=phi
    )
    data = data_set[0]
    reconstruction.levelset_step(state, data, recon.kernel, recon.time_grid)
    _, res = transport.predict(state.medium, recon.kernel, data, recon.time_grid)
    assert res.norm() < state.history[-1].norm
    inside = state.phi <= 0
    assert inside.sum() > seed.sum()
    assert not (inside & ~truth).any()


def test_levelset_without_data(recon):
    """Test that level set sweeps reject an empty data set."""
    state = recon.init_levelset(recon.truth.a)
    with pytest.raises(ValueError):
        recon.run_levelset(state, [])
