"""Pixel-based transport-backtransport initialiser."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Callable, Optional, Sequence

import numpy as np

from .adjoint import gradient
from .grid import MediumFields, TimeGrid
from .transport import ScatteringKernel, SourceData, predict

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class ResidualEntry:
    """Residual norm of one source before the update that used it."""

    phase: str
    sweep: int
    step: int
    source: int
    norm: float


@dataclass
class TbtState:
    """Absorption estimate a_TBT = a_b + a_s of the Kaczmarz iteration.

    Only cells of the background's update mask move; frozen cells keep
    a_s = 0 exactly.
    """

    background: MediumFields
    a: np.ndarray = field(repr=False)
    a_min: float = 0.01
    a_max: float = 2.0
    eta: Optional[float] = None
    eta_target: float = 0.05
    weight: Optional[np.ndarray] = field(default=None, repr=False)
    sweep: int = 0
    step: int = 0
    history: list[ResidualEntry] = field(default_factory=list)

    @classmethod
    def start(
        cls,
        background: MediumFields,
        a_min: float = 0.01,
        a_max: float = 2.0,
        eta: float | None = None,
        eta_target: float = 0.05,
        taper_px: float | None = None,
    ) -> TbtState:
        """Begin at a_s = 0, with updates tapered near frozen cells when taper_px is set."""
        return cls(
            background=background,
            a=background.a.copy(),
            a_min=a_min,
            a_max=a_max,
            eta=eta,
            eta_target=eta_target,
            weight=boundary_taper(background, taper_px),
        )

    @property
    def step_weight(self) -> np.ndarray:
        """Per-cell update weight, one where no taper applies."""
        if self.weight is None:
            return np.ones(self.background.shape)
        return self.weight

    @property
    def a_s(self) -> np.ndarray:
        """Absorption perturbation over the background."""
        return self.a - self.background.a

    @property
    def medium(self) -> MediumFields:
        """Background medium carrying the current absorption."""
        return self.background.with_absorption(self.a)


def boundary_taper(background: MediumFields, taper_px: float | None) -> np.ndarray | None:
    """Weight min(1, d / taper_px) of the distance d in cells to the nearest frozen cell."""
    if taper_px is None:
        return None
    if not taper_px > 0:
        raise ValueError(f"taper width must be > 0, got {taper_px}")
    return np.minimum(1.0, background.frozen_distance / taper_px)


def tbt_step(
    state: TbtState,
    data: SourceData,
    kernel: ScatteringKernel,
    tg: TimeGrid,
    cfl_max: float = 1.0,
) -> TbtState:
    """One Kaczmarz update a_s <- clamp(a_s - eta w I_j) with the data of one source."""
    medium = state.medium
    flux, res = predict(medium, kernel, data, tg, cfl_max=cfl_max)
    norm = res.norm()
    state.history.append(ResidualEntry("tbt", state.sweep, state.step, data.index, norm))
    state.step += 1

    corr = state.step_weight * gradient(medium, kernel, flux, res, cfl_max, data.index).values
    update = medium.update_mask
    peak = float(np.max(np.abs(corr[update]))) if update.any() else 0.0
    if peak == 0.0:
        _LOGGER.debug("Source %s: zero correlation, no update", data.index)
        return state

    if state.eta is None:
        state.eta = state.eta_target / peak
        _LOGGER.info("TBT relaxation set to %.4g from first update", state.eta)

    moved = np.clip(state.a - state.eta * corr, state.a_min, state.a_max)
    state.a = np.where(update, moved, state.background.a)
    _LOGGER.debug(
        "TBT source %s: residual %.4g, max |update| %.4g", data.index, norm, state.eta * peak
    )
    return state


def run_tbt(
    state: TbtState,
    data_set: Sequence[SourceData],
    kernel: ScatteringKernel,
    tg: TimeGrid,
    n_sweeps: int,
    sweep_cb: Optional[Callable[[TbtState], None]] = None,
    cfl_max: float = 1.0,
) -> TbtState:
    """Run n_sweeps sweeps, each using every source's data once in the given order."""
    if n_sweeps < 0:
        raise ValueError(f"sweep count must be >= 0, got {n_sweeps}")
    _LOGGER.info("TBT: %s sweeps over %s sources", n_sweeps, len(data_set))
    for _ in range(n_sweeps):
        state.sweep += 1
        for data in data_set:
            tbt_step(state, data, kernel, tg, cfl_max)
        if sweep_cb is not None:
            sweep_cb(state)
    _LOGGER.info(
        "TBT done: a_TBT in [%.4g, %.4g]", float(state.a.min()), float(state.a.max())
    )
    return state
