"""Level set representation of absorbing shapes."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import MismatchError, NumericalError

_LOGGER = logging.getLogger(__name__)

# 4-connectivity
_STRUCTURE_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)

_BAND_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class ShapeParams:
    """Constants of the shape model.

    `a_b` is the background absorption field. `eta` may be None, in which
    case the driver picks it on the first update.
    """

    a_hat: float
    a_b: np.ndarray = field(repr=False)
    rho: float = 1.5
    eta: Optional[float] = None
    rescale_target: float = 1.0
    max_step_cells: Optional[float] = 1.5

    def __post_init__(self) -> None:
        """Validate the constants."""
        if not self.rho >= 1.0:
            raise ValueError(f"band half-width must be >= 1 cell, got {self.rho}")
        if not self.rescale_target > 0:
            raise ValueError(f"rescale target must be positive, got {self.rescale_target}")
        if self.eta is not None and not self.eta > 0:
            raise ValueError(f"level set relaxation must be positive, got {self.eta}")

    @property
    def contrast(self) -> np.ndarray:
        """a_hat - a_b per cell."""
        return self.a_hat - self.a_b


@dataclass(frozen=True, eq=False)
class LevelSetField:
    """Level set function phi; the shape is {phi <= 0}."""

    phi: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        """Reject non-finite values."""
        if not np.all(np.isfinite(self.phi)):
            raise NumericalError("level set function has non-finite values")

    @property
    def shape_mask(self) -> np.ndarray:
        """Cells inside the shape."""
        return heaviside_map(self.phi)


@dataclass(frozen=True, eq=False)
class BandMask:
    """Cells near the zero level set and the sign-change faces defining it.

    `faces_x[i, j]` marks the face between cells (i, j) and (i+1, j);
    `faces_y[i, j]` the face between (i, j) and (i, j+1).
    """

    mask: np.ndarray = field(repr=False)
    faces_x: np.ndarray = field(repr=False)
    faces_y: np.ndarray = field(repr=False)

    @property
    def empty(self) -> bool:
        """True when no cell is in the band."""
        return not self.mask.any()

    @property
    def face_count(self) -> int:
        """Number of sign-change faces."""
        return int(self.faces_x.sum() + self.faces_y.sum())


@dataclass(frozen=True)
class ShapeComponent:
    """One 4-connected part of the shape."""

    label: int
    cells: int
    area: float
    centroid: tuple[float, float]


@dataclass(frozen=True, eq=False)
class ShapeExtraction:
    """Shape mask with its connected components."""

    mask: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    components: tuple[ShapeComponent, ...]

    @property
    def count(self) -> int:
        """Number of components."""
        return len(self.components)


def heaviside_map(phi: np.ndarray) -> np.ndarray:
    """1 where phi <= 0, else 0."""
    return np.asarray(phi) <= 0.0


def lambda_map(phi: np.ndarray, params: ShapeParams) -> np.ndarray:
    """Absorption perturbation (a_hat - a_b) inside the shape, 0 outside."""
    return np.where(heaviside_map(phi), params.contrast, 0.0)


def absorption(phi: np.ndarray, params: ShapeParams) -> np.ndarray:
    """Two-valued absorption: a_hat inside the shape, a_b outside."""
    return np.where(heaviside_map(phi), params.a_hat, params.a_b)


def _offsets(rho: float) -> tuple[range, range]:
    """Cell offsets from a face at i + 1/2 across it and along it within rho."""
    lo = math.ceil(0.5 - rho - _BAND_EPS)
    hi = math.floor(0.5 + rho + _BAND_EPS)
    along = math.floor(rho + _BAND_EPS)
    return range(lo, hi + 1), range(-along, along + 1)


def _spread(faces: np.ndarray, across: range, along: range, shape: tuple[int, int]) -> np.ndarray:
    """Mark cells at the given offsets from every marked face along axis 0."""
    out = np.zeros(shape, dtype=bool)
    fi, fj = np.nonzero(faces)
    for dp in across:
        for dq in along:
            ci, cj = fi + dp, fj + dq
            keep = (ci >= 0) & (ci < shape[0]) & (cj >= 0) & (cj < shape[1])
            out[ci[keep], cj[keep]] = True
    return out


def extract_band(
    phi: np.ndarray, rho: float, update_mask: np.ndarray | None = None
) -> BandMask:
    """Sign-change faces and the cells within rho cells (Chebyshev) of their midpoints."""
    if rho < 1.0:
        raise ValueError(f"band half-width must be >= 1 cell, got {rho}")
    psi = heaviside_map(phi)
    faces_x = psi[1:, :] != psi[:-1, :]
    faces_y = psi[:, 1:] != psi[:, :-1]
    across, along = _offsets(rho)
    mask = _spread(faces_x, across, along, psi.shape)
    mask |= _spread(faces_y.T, across, along, psi.shape[::-1]).T
    if update_mask is not None:
        mask &= update_mask
    return BandMask(mask=mask, faces_x=faces_x, faces_y=faces_y)


def band_gradient(phi: np.ndarray, band: BandMask) -> float:
    """Mean absolute difference of phi between 4-neighbours inside the band."""
    pairs_x = band.mask[1:, :] & band.mask[:-1, :]
    pairs_y = band.mask[:, 1:] & band.mask[:, :-1]
    diffs = np.concatenate(
        [np.abs(np.diff(phi, axis=0))[pairs_x], np.abs(np.diff(phi, axis=1))[pairs_y]]
    )
    return float(diffs.mean()) if diffs.size else 0.0


def levelset_update(
    phi: np.ndarray,
    backtransport: np.ndarray,
    band: BandMask,
    params: ShapeParams,
    eta: float | None = None,
    max_step: float | None = None,
) -> np.ndarray:
    """phi - eta (a_hat - a_b) B on the band, phi elsewhere.

    B is the backtransported correlation, positive where the data ask for
    more absorption. When `max_step` is given each change is clipped to it.
    """
    eta = params.eta if eta is None else eta
    if eta is None:
        raise ValueError("no level set relaxation given")
    if backtransport.shape != phi.shape or band.mask.shape != phi.shape:
        raise MismatchError("level set, correlation and band shapes differ")
    if band.empty:
        _LOGGER.warning("Empty level set band: shape vanished, update skipped")
        return phi.copy()
    delta = eta * params.contrast * backtransport
    if max_step is not None:
        delta = np.clip(delta, -max_step, max_step)
    return np.where(band.mask, phi - delta, phi)


def rescale(phi: np.ndarray, target: float = 1.0) -> np.ndarray:
    """Scale phi so |min phi| = target, or max phi = target when phi >= 0."""
    low = float(phi.min())
    if low < 0.0:
        return phi * (target / -low)
    high = float(phi.max())
    if high == 0.0:
        raise NumericalError("level set function is identically zero")
    return phi * (target / high)


def init_from_tbt(
    a_tbt: np.ndarray,
    params: ShapeParams,
    gamma: float = 0.9,
    update_mask: np.ndarray | None = None,
    margin_px: float = 0.0,
) -> np.ndarray:
    """Threshold a_TBT into an initial level set function.

    For positive contrast the threshold is gamma max a_TBT and cells at or
    above it start inside the shape; for negative contrast it is
    min a_TBT / gamma and cells at or below it start inside. Cells outside
    `update_mask`, and update cells within `margin_px` cells of them, are
    pinned outside and take no part in the threshold.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"threshold factor must lie in (0, 1), got {gamma}")
    if margin_px < 0:
        raise ValueError(f"margin must be >= 0, got {margin_px}")
    update = np.ones(a_tbt.shape, dtype=bool) if update_mask is None else update_mask
    if margin_px > 0 and not update.all():
        update = update & (ndimage.distance_transform_edt(update) > margin_px)
    values = a_tbt[update]
    if not values.size or float(values.max()) == float(values.min()):
        raise NumericalError("a_TBT has no contrast on the update region")

    sign = 1.0 if float(np.mean(params.contrast[update])) > 0 else -1.0
    threshold = gamma * float(values.max()) if sign > 0 else float(values.min()) / gamma
    _LOGGER.info("Level set threshold a_LS = %.4g (contrast sign %+d)", threshold, int(sign))

    phi = sign * (threshold - a_tbt)
    phi = np.where(update, phi, float(np.abs(phi[update]).max()))
    return rescale(phi, params.rescale_target)


def extract_shape(phi: np.ndarray, dx: float) -> ShapeExtraction:
    """Shape mask and its 4-connected components with areas and centroids in cm."""
    mask = heaviside_map(phi)
    labels, count = ndimage.label(mask, structure=_STRUCTURE_4)
    if count == 0:
        return ShapeExtraction(mask=mask, labels=labels, components=())
    ids = np.arange(1, count + 1)
    sizes = ndimage.sum(mask, labels=labels, index=ids)
    centers = ndimage.center_of_mass(mask, labels=labels, index=ids)
    components = tuple(
        ShapeComponent(
            label=int(label),
            cells=int(size),
            area=float(size) * dx * dx,
            centroid=((cx + 0.5) * dx, (cy + 0.5) * dx),
        )
        for label, size, (cx, cy) in zip(ids, sizes, centers)
    )
    return ShapeExtraction(mask=mask, labels=labels, components=components)
