"""Pixel grid, angular quadrature, time grid, boundary and phantom media."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import enum
import logging
import math

import numpy as np
from scipy import ndimage

from .errors import CflError, GeometryError

_LOGGER = logging.getLogger(__name__)

# components below this are snapped to exact zero so axis directions are exact
_AXIS_SNAP = 1e-12


class Side(enum.Enum):
    """Sides of the rectangular domain."""

    LEFT = "left"
    RIGHT = "right"
    BOTTOM = "bottom"
    TOP = "top"

    @property
    def normal(self) -> tuple[float, float]:
        """Outward unit normal of the side."""
        return _SIDE_NORMALS[self]


_SIDE_NORMALS: dict[Side, tuple[float, float]] = {
    Side.LEFT: (-1.0, 0.0),
    Side.RIGHT: (1.0, 0.0),
    Side.BOTTOM: (0.0, -1.0),
    Side.TOP: (0.0, 1.0),
}


@dataclass(frozen=True)
class GridSpec:
    """Rectangular pixel grid with its origin at the lower left corner."""

    nx: int
    ny: int
    dx: float

    def __post_init__(self) -> None:
        """Validate grid dimensions."""
        if self.nx < 4 or self.ny < 4:
            raise GeometryError(f"grid must be at least 4x4, got {self.nx}x{self.ny}")
        if not self.dx > 0:
            raise GeometryError(f"pixel size must be positive, got {self.dx}")

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape of a scalar field, indexed [ix, iy]."""
        return (self.nx, self.ny)

    @property
    def width(self) -> float:
        """Extent along x in cm."""
        return self.nx * self.dx

    @property
    def height(self) -> float:
        """Extent along y in cm."""
        return self.ny * self.dx

    @property
    def cell_area(self) -> float:
        """Area of one pixel in cm^2."""
        return self.dx * self.dx

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel center coordinates in cm, each of shape (nx, ny)."""
        xs = (np.arange(self.nx) + 0.5) * self.dx
        ys = (np.arange(self.ny) + 0.5) * self.dx
        return np.meshgrid(xs, ys, indexing="ij")

    def boundary_distance(self) -> np.ndarray:
        """Chebyshev distance of every pixel to the domain edge, in pixels."""
        ix, iy = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        return np.minimum.reduce([ix, iy, self.nx - 1 - ix, self.ny - 1 - iy])


@dataclass(frozen=True, eq=False)
class AngularQuadrature:
    """Equispaced directions on the unit circle with equal weights."""

    n_dirs: int
    directions: np.ndarray = field(repr=False)
    weight: float

    def opposite(self, k: int) -> int:
        """Index of the direction antipodal to direction k."""
        return (k + self.n_dirs // 2) % self.n_dirs


def make_quadrature(n_dirs: int) -> AngularQuadrature:
    """Build the equispaced quadrature theta_k = (cos 2pi k/n, sin 2pi k/n)."""
    if n_dirs < 4 or n_dirs % 2:
        raise GeometryError(
            f"direction count must be even and at least 4, got {n_dirs}"
        )
    angles = 2.0 * np.pi * np.arange(n_dirs) / n_dirs
    directions = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    directions[np.abs(directions) < _AXIS_SNAP] = 0.0
    directions.setflags(write=False)
    return AngularQuadrature(
        n_dirs=n_dirs, directions=directions, weight=2.0 * np.pi / n_dirs
    )


@dataclass(frozen=True)
class TimeGrid:
    """Recorded time steps and internal substeps.

    Recorded step n (1-based) ends at t_n = n * dt_rec. Each recorded step is
    split into `substeps` explicit advection steps of length dt_rec/substeps.
    """

    dt_rec: float
    n_rec: int
    substeps: int = 4
    c: float = 1.0

    def __post_init__(self) -> None:
        """Validate the time grid."""
        if not self.dt_rec > 0 or self.n_rec < 1 or self.substeps < 1:
            raise GeometryError(
                f"invalid time grid dt_rec={self.dt_rec} n_rec={self.n_rec} "
                f"substeps={self.substeps}"
            )
        if not self.c > 0:
            raise GeometryError(f"particle speed must be positive, got {self.c}")

    @property
    def dt_sub(self) -> float:
        """Length of one internal substep in s."""
        return self.dt_rec / self.substeps

    @property
    def n_substeps(self) -> int:
        """Total number of internal substeps."""
        return self.n_rec * self.substeps

    @property
    def horizon(self) -> float:
        """Final time T in s."""
        return self.dt_rec * self.n_rec

    @property
    def times(self) -> np.ndarray:
        """End times of the recorded steps, t_1 .. t_n."""
        return self.dt_rec * np.arange(1, self.n_rec + 1)

    def courant(self, grid: GridSpec) -> float:
        """Courant number c * dt_sub / dx."""
        return self.c * self.dt_sub / grid.dx

    def check_cfl(self, grid: GridSpec, cfl_max: float = 1.0) -> None:
        """Raise CflError when c * dt_sub / dx exceeds cfl_max."""
        if cfl_max > 1.0:
            raise CflError(f"cfl_max must not exceed 1, got {cfl_max}")
        courant = self.courant(grid)
        if courant > cfl_max:
            raise CflError(
                f"Courant number {courant:.4g} exceeds {cfl_max:.4g}; "
                f"increase substeps (currently {self.substeps})"
            )

    def recorded_index(self, t_r: float) -> int:
        """Zero-based index of the recorded step ending at time t_r."""
        n = round(t_r / self.dt_rec)
        if n < 1 or n > self.n_rec or abs(n * self.dt_rec - t_r) > 1e-9 * max(
            1.0, abs(t_r)
        ):
            raise GeometryError(f"t={t_r} is not a recorded time of this grid")
        return n - 1


@dataclass(frozen=True, eq=False)
class BoundaryGeometry:
    """Boundary pixels in counter-clockwise perimeter order.

    The loop starts at the lower left pixel, runs along the bottom edge, up
    the right edge, back along the top edge and down the left edge. A corner
    pixel takes its arc coordinate from the edge on which the loop first
    visits it, and its normal from the priority left, right, bottom, top.
    Corner pixels expose two faces; `face_pixel`/`face_normal` list every
    exposed face so outflow through both faces is accounted for.
    """

    grid: GridSpec
    ix: np.ndarray = field(repr=False)
    iy: np.ndarray = field(repr=False)
    normals: np.ndarray = field(repr=False)
    sides: tuple[Side, ...] = field(repr=False)
    arc: np.ndarray = field(repr=False)
    face_pixel: np.ndarray = field(repr=False)
    face_normal: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        """Number of boundary pixels."""
        return len(self.ix)

    @property
    def perimeter(self) -> float:
        """Length of the closed boundary loop in cm."""
        return 2.0 * (self.grid.width + self.grid.height)

    def arc_distance(self, arc: float | np.ndarray, other: float) -> np.ndarray:
        """Distance along the perimeter between arc coordinates."""
        diff = np.abs(np.asarray(arc, dtype=float) - other) % self.perimeter
        return np.minimum(diff, self.perimeter - diff)

    def index_of(self, ix: int, iy: int) -> int:
        """Position of pixel (ix, iy) in the boundary loop."""
        hits = np.flatnonzero((self.ix == ix) & (self.iy == iy))
        if not len(hits):
            raise GeometryError(f"pixel ({ix}, {iy}) is not on the boundary")
        return int(hits[0])

    def side_arc(self, side: Side, position: float) -> float:
        """Arc coordinate of a point given by its side and offset along it.

        Offsets run along +x for the bottom and top sides and along +y for
        the left and right sides.
        """
        width, height = self.grid.width, self.grid.height
        if side is Side.BOTTOM:
            return position
        if side is Side.RIGHT:
            return width + position
        if side is Side.TOP:
            return width + height + (width - position)
        return 2.0 * width + height + (height - position)

    def pixel_at(self, side: Side, position: float) -> int:
        """Boundary index of the pixel on `side` containing `position`."""
        grid = self.grid
        cell = int(math.floor(position / grid.dx))
        if side in (Side.BOTTOM, Side.TOP):
            if not 0 <= cell < grid.nx:
                raise GeometryError(f"{position} cm lies outside the {side.value} side")
            return self.index_of(cell, 0 if side is Side.BOTTOM else grid.ny - 1)
        if not 0 <= cell < grid.ny:
            raise GeometryError(f"{position} cm lies outside the {side.value} side")
        return self.index_of(0 if side is Side.LEFT else grid.nx - 1, cell)


def _pixel_side(grid: GridSpec, ix: int, iy: int) -> Side:
    """Side owning a boundary pixel, corners resolved left, right, bottom, top."""
    if ix == 0:
        return Side.LEFT
    if ix == grid.nx - 1:
        return Side.RIGHT
    if iy == 0:
        return Side.BOTTOM
    return Side.TOP


def build_boundary(grid: GridSpec) -> BoundaryGeometry:
    """Enumerate the 2(nx+ny)-4 boundary pixels with normals and arc length."""
    nx, ny, dx = grid.nx, grid.ny, grid.dx
    width, height = grid.width, grid.height

    loop: list[tuple[int, int, float]] = []
    for ix in range(nx):
        loop.append((ix, 0, (ix + 0.5) * dx))
    for iy in range(1, ny):
        loop.append((nx - 1, iy, width + (iy + 0.5) * dx))
    for ix in range(nx - 2, -1, -1):
        loop.append((ix, ny - 1, width + height + (nx - ix - 0.5) * dx))
    for iy in range(ny - 2, 0, -1):
        loop.append((0, iy, 2.0 * width + height + (ny - iy - 0.5) * dx))

    sides = tuple(_pixel_side(grid, ix, iy) for ix, iy, _ in loop)

    face_pixel: list[int] = []
    face_normal: list[tuple[float, float]] = []
    for index, (ix, iy, _) in enumerate(loop):
        exposed = (
            (ix == 0, Side.LEFT),
            (ix == nx - 1, Side.RIGHT),
            (iy == 0, Side.BOTTOM),
            (iy == ny - 1, Side.TOP),
        )
        for is_exposed, side in exposed:
            if is_exposed:
                face_pixel.append(index)
                face_normal.append(side.normal)

    return BoundaryGeometry(
        grid=grid,
        ix=np.array([p[0] for p in loop], dtype=int),
        iy=np.array([p[1] for p in loop], dtype=int),
        normals=np.array([side.normal for side in sides], dtype=float),
        sides=sides,
        arc=np.array([p[2] for p in loop], dtype=float),
        face_pixel=np.array(face_pixel, dtype=int),
        face_normal=np.array(face_normal, dtype=float),
    )


@dataclass(frozen=True, eq=False)
class MediumFields:
    """Optical parameters on the grid, all in cm^-1."""

    grid: GridSpec
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    clear_mask: np.ndarray = field(repr=False)
    frozen_mask: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        """Validate positivity and mask consistency."""
        for name in ("a", "b", "clear_mask", "frozen_mask"):
            if getattr(self, name).shape != self.grid.shape:
                raise GeometryError(f"medium field {name} does not match the grid")
        if not np.all(np.isfinite(self.a)) or not np.all(np.isfinite(self.b)):
            raise GeometryError("medium fields must be finite")
        if self.a.min() < 0:
            raise GeometryError(f"absorption must be non-negative, min is {self.a.min()}")
        if self.b.min() < 0:
            raise GeometryError(f"scattering must be non-negative, min is {self.b.min()}")
        if np.any(self.clear_mask & ~self.frozen_mask):
            raise GeometryError("frozen mask must contain the clear mask")

    @property
    def shape(self) -> tuple[int, int]:
        """Grid shape of the fields."""
        return self.a.shape

    @property
    def mu(self) -> np.ndarray:
        """Total attenuation a + b."""
        return self.a + self.b

    @property
    def update_mask(self) -> np.ndarray:
        """Cells an inversion may change."""
        return ~self.frozen_mask

    @property
    def frozen_distance(self) -> np.ndarray:
        """Euclidean distance in cells to the nearest frozen cell, inf when none is frozen."""
        if not self.frozen_mask.any():
            return np.full(self.shape, np.inf)
        return ndimage.distance_transform_edt(~self.frozen_mask)

    def with_absorption(self, a: np.ndarray) -> MediumFields:
        """Copy of the medium with a new absorption field."""
        return replace(self, a=np.asarray(a, dtype=float))


@dataclass(frozen=True)
class ClearLayer:
    """Clear ring at a fixed pixel offset from the domain edge."""

    offset_px: int = 5
    thickness_px: int = 3
    a: float = 0.01
    b: float = 0.01


@dataclass(frozen=True)
class ClearDisc:
    """Disc-shaped clear region."""

    center: tuple[float, float]
    radius: float
    a: float = 0.01
    b: float = 0.01


@dataclass(frozen=True)
class Obstacle:
    """Disc-shaped absorbing inclusion."""

    center: tuple[float, float]
    radius: float
    a: float


@dataclass(frozen=True)
class PhantomSpec:
    """Synthetic medium: background, clear regions and obstacles."""

    a_b: float = 0.1
    b_b: float = 100.0
    clear_layer: ClearLayer | None = None
    clear_discs: tuple[ClearDisc, ...] = ()
    obstacles: tuple[Obstacle, ...] = ()

    def background(self) -> PhantomSpec:
        """The same phantom with every obstacle removed."""
        return replace(self, obstacles=())


def disc_mask(grid: GridSpec, center: tuple[float, float], radius: float) -> np.ndarray:
    """Pixels whose center lies strictly inside the disc."""
    xs, ys = grid.cell_centers()
    return (xs - center[0]) ** 2 + (ys - center[1]) ** 2 < radius * radius


def layer_mask(grid: GridSpec, layer: ClearLayer) -> np.ndarray:
    """Pixels of a clear ring."""
    dist = grid.boundary_distance()
    return (dist >= layer.offset_px) & (dist < layer.offset_px + layer.thickness_px)


def _check_phantom(spec: PhantomSpec) -> None:
    """Reject negative radii and non-positive values."""
    if not spec.a_b > 0 or not spec.b_b > 0:
        raise GeometryError("background a_b and b_b must be positive")
    layer = spec.clear_layer
    if layer is not None:
        if layer.offset_px < 0 or layer.thickness_px < 0:
            raise GeometryError("clear layer offset and thickness must be >= 0")
        if not layer.a > 0 or not layer.b > 0:
            raise GeometryError("clear layer values must be positive")
    for disc in (*spec.clear_discs, *spec.obstacles):
        if disc.radius < 0:
            raise GeometryError(f"disc radius must be >= 0, got {disc.radius}")
        if not disc.a > 0:
            raise GeometryError(f"disc absorption must be positive, got {disc.a}")
    for disc in spec.clear_discs:
        if not disc.b > 0:
            raise GeometryError(f"clear disc scattering must be positive, got {disc.b}")


def build_phantom(spec: PhantomSpec, grid: GridSpec) -> MediumFields:
    """Paint background, clear layer, clear discs and obstacles in that order."""
    _check_phantom(spec)
    a = np.full(grid.shape, spec.a_b, dtype=float)
    b = np.full(grid.shape, spec.b_b, dtype=float)
    clear = np.zeros(grid.shape, dtype=bool)

    if spec.clear_layer is not None:
        mask = layer_mask(grid, spec.clear_layer)
        a[mask] = spec.clear_layer.a
        b[mask] = spec.clear_layer.b
        clear |= mask

    for disc in spec.clear_discs:
        mask = disc_mask(grid, disc.center, disc.radius)
        a[mask] = disc.a
        b[mask] = disc.b
        clear |= mask

    for index, obstacle in enumerate(spec.obstacles):
        mask = disc_mask(grid, obstacle.center, obstacle.radius)
        if np.any(mask & clear):
            raise GeometryError(
                f"obstacle {index} at {obstacle.center} overlaps a clear region"
            )
        a[mask] = obstacle.a

    _LOGGER.debug(
        "Built phantom: %s clear cells, %s obstacles", int(clear.sum()), len(spec.obstacles)
    )
    return MediumFields(grid=grid, a=a, b=b, clear_mask=clear, frozen_mask=clear.copy())


def freeze_exterior(medium: MediumFields, layer: ClearLayer | None) -> MediumFields:
    """Also freeze the cells between the domain edge and the clear layer."""
    if layer is None:
        return medium
    outside = medium.grid.boundary_distance() < layer.offset_px
    return replace(medium, frozen_mask=medium.frozen_mask | outside)
