"""Time-dependent discrete-ordinates transport solver and boundary data."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import enum
import logging
from typing import Callable, Optional

import numpy as np

from .errors import CflError, GeometryError, MismatchError
from .grid import (
    AngularQuadrature,
    BoundaryGeometry,
    GridSpec,
    MediumFields,
    Side,
    TimeGrid,
    build_boundary,
)

_LOGGER = logging.getLogger(__name__)

# tolerance for placing a recorded time on a window edge
_TIME_EPS = 1e-9


class Store(enum.Enum):
    """How much of the field a solve keeps."""

    RECORDED = "recorded"
    SUBSTEP = "substep"


@dataclass(frozen=True, eq=False)
class ScatteringKernel:
    """Discrete Henyey-Greenstein kernel, row-stochastic under the quadrature."""

    matrix: np.ndarray = field(repr=False)
    g: float
    quad: AngularQuadrature = field(repr=False)

    @property
    def n_dirs(self) -> int:
        """Number of directions the kernel acts on."""
        return self.quad.n_dirs

    @property
    def transfer(self) -> np.ndarray:
        """Scattering gain matrix K * w."""
        return self.matrix * self.quad.weight


def hg_phase(cos_theta: float | np.ndarray, g: float) -> np.ndarray:
    """Henyey-Greenstein value (1 - g^2) / (2 (1 + g^2 - 2 g cos)^(3/2))."""
    denom = 1.0 + g * g - 2.0 * g * np.asarray(cos_theta, dtype=float)
    return (1.0 - g * g) / (2.0 * denom * np.sqrt(denom))


def hg_kernel(g: float, quad: AngularQuadrature) -> ScatteringKernel:
    """Build the kernel and renormalise each row so sum_j K_ij w = 1."""
    if not -1.0 < g < 1.0:
        raise GeometryError(f"anisotropy g must lie in (-1, 1), got {g}")
    cosines = np.clip(quad.directions @ quad.directions.T, -1.0, 1.0)
    raw = hg_phase(cosines, g)
    matrix = raw / (raw.sum(axis=1, keepdims=True) * quad.weight)
    # rows agree up to round-off; averaging with the transpose keeps K exactly symmetric
    matrix = 0.5 * (matrix + matrix.T)
    matrix.setflags(write=False)
    return ScatteringKernel(matrix=matrix, g=g, quad=quad)


@dataclass(frozen=True)
class SourceSpec:
    """Boundary pulse emitted along the inward normal during the first recorded step.

    `center` is the offset in cm of the source midpoint along its side,
    measured along +x on the bottom and top sides and along +y on the left
    and right sides.
    """

    side: Side
    center: float
    width_px: int = 5
    amplitude: float = 1.0

    def pixel_range(self, grid: GridSpec) -> range:
        """Along-side pixel indices covered by the source."""
        start = int(round(self.center / grid.dx - self.width_px / 2.0))
        length = grid.nx if self.side in (Side.BOTTOM, Side.TOP) else grid.ny
        if self.width_px < 1 or start < 1 or start + self.width_px > length - 1:
            raise GeometryError(
                f"source on {self.side.value} side at {self.center} cm does not fit "
                "between the corners"
            )
        return range(start, start + self.width_px)

    def cells(self, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates (ix, iy) of the source support."""
        along = np.array(self.pixel_range(grid), dtype=int)
        fixed = {
            Side.LEFT: 0,
            Side.RIGHT: grid.nx - 1,
            Side.BOTTOM: 0,
            Side.TOP: grid.ny - 1,
        }[self.side]
        if self.side in (Side.BOTTOM, Side.TOP):
            return along, np.full_like(along, fixed)
        return np.full_like(along, fixed), along

    def emission_direction(self, quad: AngularQuadrature) -> int:
        """Quadrature direction closest to the inward normal."""
        inward = -np.asarray(self.side.normal)
        k = int(np.argmax(quad.directions @ inward))
        if not quad.directions[k] @ inward > 0:
            raise GeometryError("no quadrature direction points into the domain")
        return k

    def scaled(self, amplitude: float) -> SourceSpec:
        """Copy with a new amplitude."""
        return replace(self, amplitude=amplitude)


def make_sources(
    grid: GridSpec,
    per_side: int = 4,
    width_px: int = 5,
    span_px: int = 20,
    order: tuple[Side, ...] = (Side.BOTTOM, Side.RIGHT, Side.TOP, Side.LEFT),
    amplitude: float = 1.0,
) -> list[SourceSpec]:
    """Tile the central span of each side with equally wide sources."""
    if per_side * width_px > span_px:
        raise GeometryError(
            f"{per_side} sources of {width_px} px do not fit a {span_px} px span"
        )
    sources: list[SourceSpec] = []
    for side in order:
        length = grid.nx if side in (Side.BOTTOM, Side.TOP) else grid.ny
        first = (length - span_px) // 2
        gap = (span_px - per_side * width_px) / per_side
        for index in range(per_side):
            offset = first + gap / 2.0 + index * (width_px + gap)
            center = (offset + width_px / 2.0) * grid.dx
            sources.append(
                SourceSpec(side=side, center=center, width_px=width_px, amplitude=amplitude)
            )
    for source in sources:
        source.pixel_range(grid)
    return sources


@dataclass(frozen=True, eq=False)
class AngularFluxHistory:
    """Angular field u[k, ix, iy] over time.

    `recorded[n]` is the state at t_n = n dt_rec (index 0 is t = 0).
    `boundary_states[s]` holds the boundary pixel values of substep state s,
    s = 0 .. n_substeps, and `substeps` (optional) the full substep states.
    """

    grid: GridSpec
    quad: AngularQuadrature = field(repr=False)
    time_grid: TimeGrid
    boundary: BoundaryGeometry = field(repr=False)
    recorded: np.ndarray = field(repr=False)
    boundary_states: np.ndarray = field(repr=False)
    substeps: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def has_substeps(self) -> bool:
        """Whether every substep state is available."""
        return self.substeps is not None

    @classmethod
    def from_substeps(
        cls,
        states: np.ndarray,
        grid: GridSpec,
        quad: AngularQuadrature,
        time_grid: TimeGrid,
        boundary: BoundaryGeometry | None = None,
    ) -> AngularFluxHistory:
        """Assemble a history from a full stack of substep states."""
        boundary = boundary or build_boundary(grid)
        expected = (time_grid.n_substeps + 1, quad.n_dirs, grid.nx, grid.ny)
        if states.shape != expected:
            raise MismatchError(f"states have shape {states.shape}, expected {expected}")
        return cls(
            grid=grid,
            quad=quad,
            time_grid=time_grid,
            boundary=boundary,
            recorded=states[:: time_grid.substeps].copy(),
            boundary_states=states[:, :, boundary.ix, boundary.iy].copy(),
            substeps=states,
        )


@dataclass(frozen=True, eq=False)
class BoundaryFluxTrace:
    """Outgoing flux G[r, n] on every boundary pixel and recorded step.

    Only entries on `receivers` x `window` are data; the rest are zero after
    `restricted`.
    """

    values: np.ndarray = field(repr=False)
    arc: np.ndarray = field(repr=False)
    times: np.ndarray = field(repr=False)
    dt_rec: float
    receivers: np.ndarray = field(repr=False)
    window: np.ndarray = field(repr=False)

    @property
    def support(self) -> np.ndarray:
        """Boolean mask of the data entries."""
        return self.receivers[:, None] & self.window[None, :]

    def restricted(self, selection: ReceiverSelection) -> BoundaryFluxTrace:
        """Copy keeping only the selected receivers and recorded steps."""
        if selection.receivers.shape != self.receivers.shape or (
            selection.window.shape != self.window.shape
        ):
            raise MismatchError("receiver selection does not match the trace")
        support = selection.receivers[:, None] & selection.window[None, :]
        return replace(
            self,
            values=np.where(support, self.values, 0.0),
            receivers=selection.receivers.copy(),
            window=selection.window.copy(),
        )

    def scaled(self, factor: float) -> BoundaryFluxTrace:
        """Copy with every value multiplied by factor."""
        return replace(self, values=self.values * factor)

    def norm(self) -> float:
        """Discrete L2 norm sqrt(sum value^2 dt_rec) over the support."""
        return float(np.sqrt(np.sum(np.where(self.support, self.values, 0.0) ** 2) * self.dt_rec))


class ResidualTrace(BoundaryFluxTrace):
    """Signed boundary data, zero outside the receiver set and window."""


@dataclass(frozen=True, eq=False)
class ReceiverSelection:
    """Receivers and recorded steps used as data for one source."""

    receivers: np.ndarray = field(repr=False)
    window: np.ndarray = field(repr=False)


class TransportScheme:
    """One explicit-advection, implicit-collision step and its transpose.

    A substep maps u^s to u^{s+1} by solving, per cell,
    M u^{s+1} = A u^s + dt q^s with M = (1 + dt (a + b)) I - dt b K w and A
    the conservative first-order upwind advection with vacuum inflow.
    """

    def __init__(
        self,
        medium: MediumFields,
        kernel: ScatteringKernel,
        time_grid: TimeGrid,
        cfl_max: float = 1.0,
    ) -> None:
        """Precompute advection coefficients and per-cell collision inverses."""
        self.medium = medium
        self.grid = medium.grid
        self.quad = kernel.quad
        self.kernel = kernel
        self.time_grid = time_grid
        self.dt = time_grid.dt_sub
        self.boundary = build_boundary(self.grid)

        if kernel.matrix.shape != (self.quad.n_dirs, self.quad.n_dirs):
            raise MismatchError("kernel does not match its quadrature")
        time_grid.check_cfl(self.grid, cfl_max)

        courant = time_grid.courant(self.grid)
        dirs = self.quad.directions
        self.lam_x = courant * np.abs(dirs[:, 0])
        self.lam_y = courant * np.abs(dirs[:, 1])
        self.sign_x = np.sign(dirs[:, 0]).astype(int)
        self.sign_y = np.sign(dirs[:, 1]).astype(int)
        worst = float(np.max(self.lam_x + self.lam_y))
        if worst > 1.0 + 1e-12:
            raise CflError(
                f"upwind step is not monotone: max (|cx| + |cy|) c dt/dx = {worst:.4g}"
            )
        self._inverses = self._collision_inverses()

    def _collision_inverses(self) -> np.ndarray:
        """Inverse collision matrix per cell, factorised once per (a, b) pair."""
        a = self.medium.a.ravel()
        b = self.medium.b.ravel()
        pairs, inverse = np.unique(np.stack([a, b], axis=1), axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        n_dirs = self.quad.n_dirs
        eye = np.eye(n_dirs)
        transfer = self.kernel.transfer
        matrices = (
            (1.0 + self.dt * (pairs[:, 0] + pairs[:, 1]))[:, None, None] * eye
            - (self.dt * pairs[:, 1])[:, None, None] * transfer
        )
        _LOGGER.debug("Collision step: %s distinct media values", len(pairs))
        return np.linalg.inv(matrices)[inverse]

    def advect(self, u: np.ndarray) -> np.ndarray:
        """Upwind advection A u; mass leaving through the boundary is dropped."""
        out = np.empty_like(u)
        for k in range(self.quad.n_dirs):
            lx, ly = self.lam_x[k], self.lam_y[k]
            src = u[k]
            dst = out[k]
            np.multiply(src, 1.0 - lx - ly, out=dst)
            if self.sign_x[k] > 0:
                dst[1:, :] += lx * src[:-1, :]
            elif self.sign_x[k] < 0:
                dst[:-1, :] += lx * src[1:, :]
            if self.sign_y[k] > 0:
                dst[:, 1:] += ly * src[:, :-1]
            elif self.sign_y[k] < 0:
                dst[:, :-1] += ly * src[:, 1:]
        return out

    def advect_transpose(self, z: np.ndarray) -> np.ndarray:
        """Transpose A^T z, which transports along -theta."""
        out = np.empty_like(z)
        for k in range(self.quad.n_dirs):
            lx, ly = self.lam_x[k], self.lam_y[k]
            src = z[k]
            dst = out[k]
            np.multiply(src, 1.0 - lx - ly, out=dst)
            if self.sign_x[k] > 0:
                dst[:-1, :] += lx * src[1:, :]
            elif self.sign_x[k] < 0:
                dst[1:, :] += lx * src[:-1, :]
            if self.sign_y[k] > 0:
                dst[:, :-1] += ly * src[:, 1:]
            elif self.sign_y[k] < 0:
                dst[:, 1:] += ly * src[:, :-1]
        return out

    def collide(self, y: np.ndarray) -> np.ndarray:
        """Solve M u = y cell by cell."""
        flat = y.reshape(self.quad.n_dirs, -1)
        return np.einsum("ckj,jc->kc", self._inverses, flat).reshape(y.shape)

    def collide_transpose(self, y: np.ndarray) -> np.ndarray:
        """Solve M^T z = y cell by cell."""
        flat = y.reshape(self.quad.n_dirs, -1)
        return np.einsum("cjk,jc->kc", self._inverses, flat).reshape(y.shape)

    def zeros(self) -> np.ndarray:
        """A zero angular field."""
        return np.zeros((self.quad.n_dirs, self.grid.nx, self.grid.ny))

    def step(
        self,
        u: np.ndarray,
        s: int,
        source_term: Callable[[int, np.ndarray], Optional[np.ndarray]] | None = None,
    ) -> np.ndarray:
        """Advance state u^s to u^{s+1}."""
        y = self.advect(u)
        if source_term is not None:
            extra = source_term(s, y)
            if extra is not None:
                y += extra
        return self.collide(y)

    def run(
        self,
        source_term: Callable[[int, np.ndarray], Optional[np.ndarray]],
        store: Store = Store.RECORDED,
        boundary: BoundaryGeometry | None = None,
    ) -> AngularFluxHistory:
        """March all substeps forward.

        `source_term(s, y)` returns dt q^s to add to the advected field y of
        substep s, or None. It may read y but must not modify it.
        """
        tg = self.time_grid
        boundary = boundary or self.boundary
        n_sub = tg.n_substeps
        u = self.zeros()

        recorded = np.zeros((tg.n_rec + 1,) + u.shape)
        boundary_states = np.zeros((n_sub + 1, self.quad.n_dirs, boundary.count))
        substeps = np.zeros((n_sub + 1,) + u.shape) if store is Store.SUBSTEP else None

        for s in range(n_sub):
            u = self.step(u, s, source_term)
            boundary_states[s + 1] = u[:, boundary.ix, boundary.iy]
            if substeps is not None:
                substeps[s + 1] = u
            if (s + 1) % tg.substeps == 0:
                recorded[(s + 1) // tg.substeps] = u

        return AngularFluxHistory(
            grid=self.grid,
            quad=self.quad,
            time_grid=tg,
            boundary=boundary,
            recorded=recorded,
            boundary_states=boundary_states,
            substeps=substeps,
        )


def source_injection(
    source: SourceSpec, grid: GridSpec, quad: AngularQuadrature, time_grid: TimeGrid
) -> Callable[[int, np.ndarray], Optional[np.ndarray]]:
    """Spread the source mass evenly over the substeps of the first recorded step."""
    ix, iy = source.cells(grid)
    k = source.emission_direction(quad)
    per_substep = source.amplitude / (
        time_grid.substeps * grid.cell_area * quad.weight * len(ix)
    )
    pulse = np.zeros((quad.n_dirs, grid.nx, grid.ny))
    pulse[k, ix, iy] = per_substep

    def term(step: int, _: np.ndarray) -> Optional[np.ndarray]:
        return pulse if step < time_grid.substeps else None

    return term


def forward_solve(
    medium: MediumFields,
    kernel: ScatteringKernel,
    source: SourceSpec,
    time_grid: TimeGrid,
    store: Store = Store.RECORDED,
    cfl_max: float = 1.0,
) -> AngularFluxHistory:
    """Solve the transport problem for one boundary source."""
    scheme = TransportScheme(medium, kernel, time_grid, cfl_max)
    term = source_injection(source, medium.grid, kernel.quad, time_grid)
    _LOGGER.debug(
        "Forward solve: %s source at %.3f cm, %s substeps",
        source.side.value,
        source.center,
        time_grid.n_substeps,
    )
    return scheme.run(term, store)


def outflow_weights(boundary: BoundaryGeometry, quad: AngularQuadrature) -> np.ndarray:
    """Matrix P[r, k] = sum over exposed faces of max(nu . theta_k, 0) w."""
    dots = boundary.face_normal @ quad.directions.T
    per_face = np.where(dots > 0.0, dots, 0.0) * quad.weight
    weights = np.zeros((boundary.count, quad.n_dirs))
    np.add.at(weights, boundary.face_pixel, per_face)
    return weights


def measure(
    flux: AngularFluxHistory, boundary: BoundaryGeometry, quad: AngularQuadrature
) -> BoundaryFluxTrace:
    """Outgoing flux per boundary pixel, averaged over each recorded interval."""
    if boundary.count != flux.boundary_states.shape[2] or quad.n_dirs != flux.quad.n_dirs:
        raise MismatchError("boundary or quadrature does not match the field")
    tg = flux.time_grid
    weights = outflow_weights(boundary, quad)
    # the state entering substep s is the one advected through the boundary
    instant = np.einsum("rk,skr->sr", weights, flux.boundary_states[:-1])
    values = instant.reshape(tg.n_rec, tg.substeps, boundary.count).sum(axis=1)
    values = (values / tg.substeps).T
    return BoundaryFluxTrace(
        values=values,
        arc=boundary.arc.copy(),
        times=tg.times,
        dt_rec=tg.dt_rec,
        receivers=np.ones(boundary.count, dtype=bool),
        window=np.ones(tg.n_rec, dtype=bool),
    )


def time_window(time_grid: TimeGrid, start: float, end: float) -> np.ndarray:
    """Recorded steps with start < t_n <= end."""
    times = time_grid.times
    return (times > start + _TIME_EPS) & (times <= end + _TIME_EPS)


def select_receivers(
    source: SourceSpec,
    boundary: BoundaryGeometry,
    time_grid: TimeGrid,
    min_arc: float = 5.0,
    window: tuple[float, float] = (8.0, 20.0),
) -> ReceiverSelection:
    """Boundary pixels at least min_arc cm away along the perimeter, late times only."""
    center = boundary.side_arc(source.side, source.center)
    receivers = boundary.arc_distance(boundary.arc, center) >= min_arc - _TIME_EPS
    if not receivers.any():
        raise GeometryError(
            f"no receiver lies {min_arc} cm from the {source.side.value} source "
            f"at {source.center} cm"
        )
    mask = time_window(time_grid, *window)
    return ReceiverSelection(receivers=receivers, window=mask)


def residual(computed: BoundaryFluxTrace, observed: BoundaryFluxTrace) -> ResidualTrace:
    """Computed minus observed data on the shared support."""
    if computed.values.shape != observed.values.shape:
        raise MismatchError(
            f"trace shapes differ: {computed.values.shape} vs {observed.values.shape}"
        )
    if not (
        np.array_equal(computed.receivers, observed.receivers)
        and np.array_equal(computed.window, observed.window)
    ):
        raise MismatchError("traces use different receivers or time windows")
    support = computed.support
    return ResidualTrace(
        values=np.where(support, computed.values - observed.values, 0.0),
        arc=computed.arc,
        times=computed.times,
        dt_rec=computed.dt_rec,
        receivers=computed.receivers.copy(),
        window=computed.window.copy(),
    )


def interior_mass(flux: AngularFluxHistory) -> np.ndarray:
    """Photon count sum u w dx^2 at every recorded time, t = 0 included."""
    return flux.recorded.sum(axis=(1, 2, 3)) * flux.quad.weight * flux.grid.cell_area


def cumulative_outflow(trace: BoundaryFluxTrace, grid: GridSpec, time_grid: TimeGrid) -> np.ndarray:
    """Mass that left through the boundary by each recorded time, t = 0 included."""
    per_step = trace.values.sum(axis=0) * time_grid.dt_rec * time_grid.c * grid.dx
    return np.concatenate([[0.0], np.cumsum(per_step)])


@dataclass(frozen=True, eq=False)
class SourceData:
    """Observed boundary data of one source, restricted to its receivers and window."""

    index: int
    source: SourceSpec
    observed: BoundaryFluxTrace

    @property
    def selection(self) -> ReceiverSelection:
        """Receivers and recorded steps carrying data."""
        return ReceiverSelection(
            receivers=self.observed.receivers, window=self.observed.window
        )


def predict(
    medium: MediumFields,
    kernel: ScatteringKernel,
    data: SourceData,
    time_grid: TimeGrid,
    store: Store = Store.SUBSTEP,
    cfl_max: float = 1.0,
) -> tuple[AngularFluxHistory, ResidualTrace]:
    """Forward solve for one source and its residual against the observed data."""
    flux = forward_solve(medium, kernel, data.source, time_grid, store, cfl_max)
    computed = measure(flux, flux.boundary, kernel.quad).restricted(data.selection)
    return flux, residual(computed, data.observed)
