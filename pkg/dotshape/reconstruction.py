"""Two-step reconstruction: data generation, TBT, then level set sweeps."""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, field
import logging
import math
from typing import Callable, Optional, Sequence

import numpy as np

from .adjoint import gradient
from .config import PipelineConfig
from .grid import MediumFields, TimeGrid, build_phantom, freeze_exterior, make_quadrature
from .levelset import (
    ShapeExtraction,
    ShapeParams,
    absorption,
    band_gradient,
    extract_band,
    extract_shape,
    init_from_tbt,
    levelset_update,
    rescale,
)
from .tbt import ResidualEntry, TbtState, run_tbt
from .transport import (
    BoundaryFluxTrace,
    ScatteringKernel,
    SourceData,
    SourceSpec,
    Store,
    forward_solve,
    hg_kernel,
    make_sources,
    measure,
    predict,
    select_receivers,
)

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Intermediate fields emitted during a reconstruction."""

    phase: str
    label: str
    sweep: int
    step: int
    fields: dict[str, np.ndarray] = field(repr=False)


@dataclass
class ReconstructionState:
    """Current level set iterate and its step log."""

    params: ShapeParams
    background: MediumFields
    phi: np.ndarray = field(repr=False)
    eta: Optional[float] = None
    sweep: int = 0
    step: int = 0
    history: list[ResidualEntry] = field(default_factory=list)

    @property
    def a(self) -> np.ndarray:
        """Two-valued absorption a_b + Lambda(phi)."""
        return absorption(self.phi, self.params)

    @property
    def medium(self) -> MediumFields:
        """Background medium carrying the current absorption."""
        return self.background.with_absorption(self.a)


@dataclass(eq=False)
class ReconstructionResult:
    """Outcome of a full pipeline run."""

    truth: MediumFields
    a_tbt: np.ndarray = field(repr=False)
    phi_init: np.ndarray = field(repr=False)
    state: ReconstructionState = field(repr=False)
    shape: ShapeExtraction = field(repr=False)
    history: list[ResidualEntry] = field(default_factory=list)
    sweep_norms: list[tuple[str, int, float]] = field(default_factory=list)
    initial_norm: float = 0.0
    derived: dict[str, object] = field(default_factory=dict)


def residual_norm(traces: Sequence[BoundaryFluxTrace]) -> float:
    """sqrt of sum over sources, receivers and windowed steps of value^2 dt_rec."""
    return math.sqrt(sum(trace.norm() ** 2 for trace in traces))


def sweep_norms(history: Sequence[ResidualEntry]) -> list[tuple[str, int, float]]:
    """All-source residual norm per (phase, sweep), in order of appearance."""
    totals: dict[tuple[str, int], float] = {}
    for entry in history:
        key = (entry.phase, entry.sweep)
        totals[key] = totals.get(key, 0.0) + entry.norm**2
    return [(phase, sweep, math.sqrt(total)) for (phase, sweep), total in totals.items()]


def source_data(
    index: int,
    source: SourceSpec,
    truth: MediumFields,
    kernel: ScatteringKernel,
    tg: TimeGrid,
    min_arc: float = 5.0,
    window: tuple[float, float] = (8.0, 20.0),
    cfl_max: float = 1.0,
) -> SourceData:
    """Synthetic data of one source on the true medium, without noise."""
    flux = forward_solve(truth, kernel, source, tg, Store.RECORDED, cfl_max)
    selection = select_receivers(source, flux.boundary, tg, min_arc, window)
    observed = measure(flux, flux.boundary, kernel.quad).restricted(selection)
    return SourceData(index=index, source=source, observed=observed)


async def generate_data_async(
    truth: MediumFields,
    kernel: ScatteringKernel,
    sources: Sequence[SourceSpec],
    tg: TimeGrid,
    min_arc: float = 5.0,
    window: tuple[float, float] = (8.0, 20.0),
    threads: int = 1,
    cfl_max: float = 1.0,
) -> list[SourceData]:
    """Solve every source in worker threads; results come back in source order."""
    semaphore = asyncio.Semaphore(max(1, threads))

    async def one(index: int, source: SourceSpec) -> SourceData:
        async with semaphore:
            _LOGGER.debug("Generating data for source %s", index)
            return await asyncio.to_thread(
                source_data, index, source, truth, kernel, tg, min_arc, window, cfl_max
            )

    return list(await asyncio.gather(*(one(i, s) for i, s in enumerate(sources))))


def generate_data(
    truth: MediumFields,
    kernel: ScatteringKernel,
    sources: Sequence[SourceSpec],
    tg: TimeGrid,
    min_arc: float = 5.0,
    window: tuple[float, float] = (8.0, 20.0),
    threads: int = 1,
    cfl_max: float = 1.0,
) -> list[SourceData]:
    """Synchronous wrapper of `generate_data_async`."""
    return asyncio.run(
        generate_data_async(truth, kernel, sources, tg, min_arc, window, threads, cfl_max)
    )


def all_source_norm(
    medium: MediumFields,
    kernel: ScatteringKernel,
    data_set: Sequence[SourceData],
    tg: TimeGrid,
    cfl_max: float = 1.0,
) -> float:
    """Residual norm of a medium against every source's data."""
    traces = [
        predict(medium, kernel, data, tg, Store.RECORDED, cfl_max)[1] for data in data_set
    ]
    return residual_norm(traces)


def levelset_step(
    state: ReconstructionState,
    data: SourceData,
    kernel: ScatteringKernel,
    tg: TimeGrid,
    cfl_max: float = 1.0,
) -> ReconstructionState:
    """One Kaczmarz level set update with the data of one source."""
    params = state.params
    medium = state.medium
    flux, res = predict(medium, kernel, data, tg, Store.SUBSTEP, cfl_max)
    norm = res.norm()
    state.history.append(ResidualEntry("levelset", state.sweep, state.step, data.index, norm))
    state.step += 1

    band = extract_band(state.phi, params.rho, medium.update_mask)
    if band.empty:
        _LOGGER.warning("Level set step %s: empty band, shape left unchanged", state.step)
        return state

    field_b = gradient(medium, kernel, flux, res, cfl_max, data.index).backtransport()
    max_step = None
    if params.max_step_cells is not None:
        max_step = params.max_step_cells * band_gradient(state.phi, band) or None

    eta = state.eta if state.eta is not None else params.eta
    if eta is None:
        peak = float(np.max(np.abs(params.contrast * field_b)[band.mask]))
        if peak == 0.0:
            _LOGGER.debug("Level set step %s: zero update", state.step)
            return state
        scale = max_step if max_step is not None else band_gradient(state.phi, band)
        eta = (scale or params.rescale_target) / peak
        _LOGGER.info("Level set relaxation set to %.4g from first update", eta)
    state.eta = eta

    phi = levelset_update(state.phi, field_b, band, params, eta, max_step)
    state.phi = rescale(phi, params.rescale_target)
    _LOGGER.debug(
        "Level set step %s source %s: residual %.4g, %s cells inside",
        state.step,
        data.index,
        norm,
        int((state.phi <= 0).sum()),
    )
    return state


class Reconstructor:
    """Runs the pipeline of a configuration and reports snapshots."""

    def __init__(self, config: PipelineConfig) -> None:
        """Build grid, kernel, media and sources from the configuration."""
        self.config = config
        self.grid = config.grid.spec()
        self.time_grid = config.solver.time_grid()
        self.time_grid.check_cfl(self.grid, config.solver.cfl_max)
        self.kernel = hg_kernel(config.solver.g, make_quadrature(config.solver.n_dirs))
        self.sources = make_sources(
            self.grid,
            per_side=config.sources.per_side,
            width_px=config.sources.width_px,
            span_px=config.sources.span_px,
            order=tuple(config.sources.order),
            amplitude=config.sources.amplitude,
        )
        phantom = config.phantom.spec()
        self.truth = build_phantom(phantom, self.grid)
        background = build_phantom(phantom.background(), self.grid)
        if config.inversion.freeze_outside_layer:
            background = freeze_exterior(background, phantom.clear_layer)
        self.background = background

        self.snapshot_cb: list[Callable[[Snapshot], None]] = []

    def _emit(self, snapshot: Snapshot) -> None:
        """Hand a snapshot to every registered callback."""
        _LOGGER.info("Snapshot %s", snapshot.label)
        for callback in self.snapshot_cb:
            try:
                callback(snapshot)
            except Exception as err:  # pylint: disable=broad-except
                _LOGGER.warning("Snapshot callback error: %s", err)

    def _wanted(self, count: int, listed: Sequence[int]) -> bool:
        every = self.config.inversion.snapshot_every
        return count in listed or (every is not None and count % every == 0)

    @property
    def cfl_max(self) -> float:
        """Configured Courant limit."""
        return self.config.solver.cfl_max

    def shape_params(self) -> ShapeParams:
        """Level set constants of the configuration."""
        inv = self.config.inversion
        return ShapeParams(
            a_hat=inv.a_hat,
            a_b=self.background.a,
            rho=inv.rho,
            eta=inv.eta_ls,
            rescale_target=inv.rescale_target,
            max_step_cells=inv.max_step_cells,
        )

    def generate(self, threads: int | None = None) -> list[SourceData]:
        """Synthetic data for every source."""
        recv = self.config.receivers
        return generate_data(
            self.truth,
            self.kernel,
            self.sources,
            self.time_grid,
            recv.min_arc,
            tuple(recv.window),
            threads or self.config.threads,
            self.cfl_max,
        )

    def run_tbt(self, data_set: Sequence[SourceData]) -> TbtState:
        """TBT phase with snapshots at the configured sweeps."""
        inv = self.config.inversion
        state = TbtState.start(
            self.background,
            inv.a_min,
            inv.a_max,
            inv.eta_tbt,
            inv.eta_tbt_target,
            taper_px=inv.tbt_taper_px,
        )

        def on_sweep(tbt: TbtState) -> None:
            if self._wanted(tbt.sweep, inv.tbt_snapshots):
                self._emit(
                    Snapshot(
                        "tbt",
                        f"tbt_sweep{tbt.sweep:02d}",
                        tbt.sweep,
                        tbt.step,
                        {"a": tbt.a.copy()},
                    )
                )

        return run_tbt(
            state, data_set, self.kernel, self.time_grid, inv.tbt_sweeps, on_sweep, self.cfl_max
        )

    def init_levelset(self, a_tbt: np.ndarray) -> ReconstructionState:
        """Threshold a_TBT into the initial level set iterate."""
        params = self.shape_params()
        inv = self.config.inversion
        phi = init_from_tbt(
            a_tbt, params, inv.gamma_ls, self.background.update_mask, margin_px=inv.init_margin_px
        )
        return ReconstructionState(params=params, background=self.background, phi=phi)

    def _levelset_snapshot(self, state: ReconstructionState, label: str) -> Snapshot:
        return Snapshot(
            "levelset",
            label,
            state.sweep,
            state.step,
            {"phi": state.phi.copy(), "a": state.a, "mask": (state.phi <= 0).astype(float)},
        )

    def run_levelset(
        self, state: ReconstructionState, data_set: Sequence[SourceData]
    ) -> ReconstructionState:
        """Level set sweeps, stopping early on a residual plateau when configured."""
        inv = self.config.inversion
        if inv.ls_sweeps and not data_set:
            raise ValueError("level set sweeps need data from at least one source")
        previous: float | None = None
        for _ in range(inv.ls_sweeps):
            state.sweep += 1
            for data in data_set:
                levelset_step(state, data, self.kernel, self.time_grid, self.cfl_max)
                if self._wanted(state.step, inv.ls_snapshot_steps):
                    self._emit(self._levelset_snapshot(state, f"ls_step{state.step:03d}"))
            current = dict(((p, s), n) for p, s, n in sweep_norms(state.history))[
                ("levelset", state.sweep)
            ]
            _LOGGER.info("Level set sweep %s: residual %.4g", state.sweep, current)
            if inv.plateau_tol is not None and previous is not None and previous > 0:
                if abs(previous - current) / previous < inv.plateau_tol:
                    _LOGGER.info("Residual plateau after sweep %s, stopping", state.sweep)
                    break
            previous = current
        return state

    def run(self, data_set: Sequence[SourceData] | None = None) -> ReconstructionResult:
        """Generate data, run TBT, initialise and run the level set sweeps."""
        if data_set is None:
            data_set = self.generate()
        tbt = self.run_tbt(data_set)
        state = self.init_levelset(tbt.a)
        phi_init = state.phi.copy()
        self._emit(self._levelset_snapshot(state, "ls_init"))
        initial = all_source_norm(
            state.medium, self.kernel, data_set, self.time_grid, self.cfl_max
        )
        _LOGGER.info("Level set initialised: residual %.4g", initial)

        state = self.run_levelset(state, data_set)
        shape = extract_shape(state.phi, self.grid.dx)
        _LOGGER.info("Final shape: %s components", shape.count)
        self._emit(self._levelset_snapshot(state, "final"))

        history = [*tbt.history, *state.history]
        return ReconstructionResult(
            truth=self.truth,
            a_tbt=tbt.a,
            phi_init=phi_init,
            state=state,
            shape=shape,
            history=history,
            sweep_norms=sweep_norms(history),
            initial_norm=initial,
            derived={
                "substeps": self.time_grid.substeps,
                "dt_sub": self.time_grid.dt_sub,
                "courant": self.time_grid.courant(self.grid),
                "eta_tbt": tbt.eta,
                "eta_ls": state.eta,
                "quadrature_weight": self.kernel.quad.weight,
            },
        )


def run_pipeline(
    config: PipelineConfig,
    snapshot_cb: Sequence[Callable[[Snapshot], None]] = (),
) -> ReconstructionResult:
    """Run the full reconstruction of a configuration."""
    reconstructor = Reconstructor(config)
    reconstructor.snapshot_cb.extend(snapshot_cb)
    return reconstructor.run()
