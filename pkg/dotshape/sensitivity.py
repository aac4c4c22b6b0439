"""Absorption sensitivity maps for source, receiver and time triples."""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, field
import logging
from typing import Sequence

import numpy as np

from .adjoint import gradient
from .config import PipelineConfig
from .errors import GeometryError, MismatchError, NumericalError
from .grid import BoundaryGeometry, MediumFields, TimeGrid
from .transport import (
    AngularFluxHistory,
    BoundaryFluxTrace,
    ScatteringKernel,
    SourceSpec,
    Store,
    forward_solve,
)

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SensitivityMap:
    """Response of the datum at (receiver, t_r) to absorption at every cell."""

    values: np.ndarray = field(repr=False)
    source: SourceSpec
    receiver: int
    t_r: float
    arc: float


def impulse(boundary: BoundaryGeometry, tg: TimeGrid, receiver: int, t_r: float) -> BoundaryFluxTrace:
    """Boundary data 1/dt_rec at one receiver and recorded time, zero elsewhere.

    Paired with a trace it picks that trace's value at (receiver, t_r).
    """
    if not 0 <= receiver < boundary.count:
        raise GeometryError(f"receiver {receiver} is not a boundary pixel index")
    n = tg.recorded_index(t_r)
    values = np.zeros((boundary.count, tg.n_rec))
    values[receiver, n] = 1.0 / tg.dt_rec
    receivers = np.zeros(boundary.count, dtype=bool)
    receivers[receiver] = True
    window = np.zeros(tg.n_rec, dtype=bool)
    window[n] = True
    return BoundaryFluxTrace(
        values=values,
        arc=boundary.arc.copy(),
        times=tg.times,
        dt_rec=tg.dt_rec,
        receivers=receivers,
        window=window,
    )


def sensitivity_map(
    medium: MediumFields,
    kernel: ScatteringKernel,
    source: SourceSpec,
    receiver: int,
    t_r: float,
    tg: TimeGrid,
    forward: AngularFluxHistory | None = None,
    cfl_max: float = 1.0,
) -> SensitivityMap:
    """Correlate the source field with the adjoint field of a unit datum.

    dx^2 times the sum of map * delta_a equals the linearised response at
    (receiver, t_r). A precomputed substep `forward` field may be reused.
    """
    if forward is None:
        forward = forward_solve(medium, kernel, source, tg, Store.SUBSTEP, cfl_max)
    elif forward.time_grid != tg or forward.grid != medium.grid:
        raise MismatchError("forward field does not match the time grid")
    zeta = impulse(forward.boundary, tg, receiver, t_r)
    values = gradient(medium, kernel, forward, zeta, cfl_max).values
    return SensitivityMap(
        values=values,
        source=source,
        receiver=receiver,
        t_r=t_r,
        arc=float(forward.boundary.arc[receiver]),
    )


async def sensitivity_batch_async(
    medium: MediumFields,
    kernel: ScatteringKernel,
    source: SourceSpec,
    requests: Sequence[tuple[int, float]],
    tg: TimeGrid,
    threads: int = 1,
    cfl_max: float = 1.0,
) -> list[SensitivityMap]:
    """Maps for many (receiver, t_r) pairs sharing one forward solve, in request order."""
    forward = await asyncio.to_thread(
        forward_solve, medium, kernel, source, tg, Store.SUBSTEP, cfl_max
    )
    semaphore = asyncio.Semaphore(max(1, threads))

    async def one(receiver: int, t_r: float) -> SensitivityMap:
        async with semaphore:
            _LOGGER.debug("Sensitivity map for receiver %s at t=%s", receiver, t_r)
            return await asyncio.to_thread(
                sensitivity_map, medium, kernel, source, receiver, t_r, tg, forward, cfl_max
            )

    return list(await asyncio.gather(*(one(r, t) for r, t in requests)))


def sensitivity_batch(
    medium: MediumFields,
    kernel: ScatteringKernel,
    source: SourceSpec,
    requests: Sequence[tuple[int, float]],
    tg: TimeGrid,
    threads: int = 1,
    cfl_max: float = 1.0,
) -> list[SensitivityMap]:
    """Synchronous wrapper of `sensitivity_batch_async`."""
    return asyncio.run(
        sensitivity_batch_async(medium, kernel, source, requests, tg, threads, cfl_max)
    )


def clear_layer_fraction(values: np.ndarray, clear_mask: np.ndarray) -> float:
    """Share of the total |map| that lies in the clear region."""
    if values.shape != clear_mask.shape:
        raise MismatchError("map and mask shapes differ")
    magnitude = np.abs(values)
    total = float(magnitude.sum())
    if total == 0.0:
        raise NumericalError("sensitivity map is identically zero")
    return float(magnitude[clear_mask].sum()) / total


def configured_requests(
    config: PipelineConfig, boundary: BoundaryGeometry
) -> tuple[SourceSpec, list[tuple[int, float]]]:
    """Source and (receiver, t_r) pairs of the configuration's sensitivity section."""
    sens = config.sensitivity
    source = SourceSpec(
        side=sens.source.side,
        center=sens.source.center,
        width_px=sens.source.width_px,
        amplitude=sens.source.amplitude,
    )
    requests = [
        (boundary.pixel_at(point.side, point.position), t_r)
        for point in sens.receivers
        for t_r in sens.times
    ]
    return source, requests
