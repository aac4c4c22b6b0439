"""Discrete adjoint of the transport scheme, correlation and linearisation."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Optional

import numpy as np

from .errors import MismatchError
from .grid import MediumFields, TimeGrid
from .transport import (
    AngularFluxHistory,
    BoundaryFluxTrace,
    ScatteringKernel,
    Store,
    TransportScheme,
    outflow_weights,
)

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CorrelationField:
    """Per-cell correlation of a forward and an adjoint field."""

    values: np.ndarray = field(repr=False)
    source_index: Optional[int] = None

    def backtransport(self) -> np.ndarray:
        """The negated correlation, positive where the data ask for more absorption."""
        return -self.values


def _check_history(history: AngularFluxHistory, medium: MediumFields, tg: TimeGrid) -> None:
    """Raise MismatchError when a history was built on another discretisation."""
    if history.grid != medium.grid or history.time_grid != tg:
        raise MismatchError("history does not match the medium grid or time grid")


def _check_data(zeta: BoundaryFluxTrace, history_count: int, tg: TimeGrid) -> None:
    """Raise MismatchError when boundary data do not fit the discretisation."""
    if zeta.values.shape != (history_count, tg.n_rec):
        raise MismatchError(
            f"boundary data have shape {zeta.values.shape}, "
            f"expected {(history_count, tg.n_rec)}"
        )


def _data_sources(scheme: TransportScheme, zeta: BoundaryFluxTrace) -> np.ndarray:
    """Per recorded step, the injected term dt g / (w dx^2) on boundary pixels.

    The returned array has shape (n_rec, n_dirs, n_b); row n is the transpose
    of the measurement applied to zeta(., n).
    """
    boundary = scheme.boundary
    weights = outflow_weights(boundary, scheme.quad)
    data = np.where(zeta.support, zeta.values, 0.0)
    g = np.einsum("rk,rn->nkr", weights, data)
    scale = scheme.dt / (scheme.quad.weight * scheme.grid.cell_area)
    return g * scale


def _adjoint_sweep(
    scheme: TransportScheme,
    zeta: BoundaryFluxTrace,
    forward: AngularFluxHistory | None,
    store: Store | None,
) -> tuple[Optional[np.ndarray], Optional[np.ndarray], np.ndarray]:
    """March z^s = C^T (A^T z^{s+1} - dt g^s / (w dx^2)) from z^N = 0 down to z^0.

    Returns the substep states (when `store` asks for them), the correlation
    sum (when a forward history is given) and the boundary states.
    """
    tg = scheme.time_grid
    boundary = scheme.boundary
    injected = _data_sources(scheme, zeta)
    z = scheme.zeros()

    states = np.zeros((tg.n_substeps + 1,) + z.shape) if store is Store.SUBSTEP else None
    boundary_states = np.zeros((tg.n_substeps + 1, scheme.quad.n_dirs, boundary.count))
    corr = np.zeros(scheme.grid.shape) if forward is not None else None

    for s in range(tg.n_substeps - 1, -1, -1):
        y = scheme.advect_transpose(z)
        y[:, boundary.ix, boundary.iy] -= injected[s // tg.substeps]
        z = scheme.collide_transpose(y)
        boundary_states[s] = z[:, boundary.ix, boundary.iy]
        if states is not None:
            states[s] = z
        if corr is not None:
            corr += np.einsum("kxy,kxy->xy", forward.substeps[s], z)
    if corr is not None:
        corr *= scheme.quad.weight * scheme.dt
    return states, corr, boundary_states


def adjoint_solve(
    medium: MediumFields,
    kernel: ScatteringKernel,
    zeta: BoundaryFluxTrace,
    tg: TimeGrid,
    cfl_max: float = 1.0,
) -> AngularFluxHistory:
    """Solve the adjoint problem driven by boundary data zeta.

    The result is the exact transpose of `forward_solve`: the data enter at
    every receiver pixel in each outgoing direction with weight nu . theta w,
    and z vanishes at the final time.
    """
    scheme = TransportScheme(medium, kernel, tg, cfl_max)
    _check_data(zeta, scheme.boundary.count, tg)
    states, _, boundary_states = _adjoint_sweep(scheme, zeta, None, Store.SUBSTEP)
    return AngularFluxHistory(
        grid=medium.grid,
        quad=kernel.quad,
        time_grid=tg,
        boundary=scheme.boundary,
        recorded=states[:: tg.substeps].copy(),
        boundary_states=boundary_states,
        substeps=states,
    )


def correlate(
    u: AngularFluxHistory, z: AngularFluxHistory, source_index: int | None = None
) -> CorrelationField:
    """I(x) = sum over substeps and directions of u z w dt_sub."""
    if not (u.has_substeps and z.has_substeps):
        raise MismatchError("correlation needs both fields at substep resolution")
    if u.substeps.shape != z.substeps.shape or u.time_grid != z.time_grid:
        raise MismatchError(
            f"field shapes differ: {u.substeps.shape} vs {z.substeps.shape}"
        )
    values = np.einsum("skxy,skxy->xy", u.substeps, z.substeps)
    values *= u.quad.weight * u.time_grid.dt_sub
    return CorrelationField(values=values, source_index=source_index)


def gradient(
    medium: MediumFields,
    kernel: ScatteringKernel,
    forward: AngularFluxHistory,
    zeta: BoundaryFluxTrace,
    cfl_max: float = 1.0,
    source_index: int | None = None,
) -> CorrelationField:
    """Correlate the forward field with the adjoint field without storing the latter."""
    tg = forward.time_grid
    _check_history(forward, medium, tg)
    if not forward.has_substeps:
        raise MismatchError("gradient needs the forward field at substep resolution")
    scheme = TransportScheme(medium, kernel, tg, cfl_max)
    _check_data(zeta, scheme.boundary.count, tg)
    _, corr, _ = _adjoint_sweep(scheme, zeta, forward, None)
    _LOGGER.debug("Correlation range [%.3g, %.3g]", corr.min(), corr.max())
    return CorrelationField(values=corr, source_index=source_index)


def linearized_forward(
    medium: MediumFields,
    kernel: ScatteringKernel,
    delta_a: np.ndarray,
    u: AngularFluxHistory,
    tg: TimeGrid,
    cfl_max: float = 1.0,
    store: Store = Store.RECORDED,
) -> AngularFluxHistory:
    """Field v caused by the secondary source -delta_a u.

    v solves M v^{s+1} = A v^s - dt delta_a u^{s+1} with v^0 = 0, the exact
    derivative of the discrete forward scheme in the absorption.
    """
    _check_history(u, medium, tg)
    if not u.has_substeps:
        raise MismatchError("linearisation needs the forward field at substep resolution")
    delta_a = np.asarray(delta_a, dtype=float)
    if delta_a.shape != medium.grid.shape:
        raise MismatchError(f"perturbation has shape {delta_a.shape}")
    scheme = TransportScheme(medium, kernel, tg, cfl_max)
    scaled = -tg.dt_sub * delta_a

    def term(s: int, _: np.ndarray) -> np.ndarray:
        return scaled * u.substeps[s + 1]

    return scheme.run(term, store, scheme.boundary)
