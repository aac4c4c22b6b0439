"""Grid, quadrature, boundary and phantom tests."""

from dataclasses import replace
import math

import numpy as np
import pytest

from dotshape import grid
from dotshape.errors import CflError, GeometryError

from .const import SMALL_BOUNDARY_COUNT


def test_quadrature_directions():
    """Test equispaced unit directions and antipodes."""
    quad = grid.make_quadrature(12)
    assert quad.weight == pytest.approx(2 * math.pi / 12)
    assert np.allclose(np.linalg.norm(quad.directions, axis=1), 1.0)
    assert tuple(quad.directions[0]) == (1.0, 0.0)
    assert tuple(quad.directions[3]) == (0.0, 1.0)
    for k in range(12):
        assert np.allclose(quad.directions[quad.opposite(k)], -quad.directions[k])


@pytest.mark.parametrize("n_dirs", [0, 2, 7, 13])
def test_quadrature_rejects(n_dirs):
    """Test odd or tiny direction counts."""
    with pytest.raises(GeometryError):
        grid.make_quadrature(n_dirs)


def test_grid_rejects():
    """Test invalid grids."""
    with pytest.raises(GeometryError):
        grid.GridSpec(3, 10, 0.1)
    with pytest.raises(GeometryError):
        grid.GridSpec(10, 10, 0.0)


def test_boundary_loop(small_grid):
    """Test boundary enumeration."""
    boundary = grid.build_boundary(small_grid)
    assert boundary.count == SMALL_BOUNDARY_COUNT
    # corners expose two faces
    assert len(boundary.face_pixel) == SMALL_BOUNDARY_COUNT + 4
    assert boundary.perimeter == pytest.approx(6.4)
    assert np.all(np.diff(boundary.arc) > 0)
    assert boundary.arc[0] == pytest.approx(0.05)
    assert (boundary.ix[0], boundary.iy[0]) == (0, 0)
    assert boundary.sides[0] is grid.Side.LEFT
    assert boundary.sides[5] is grid.Side.BOTTOM

    pixels = set(zip(boundary.ix.tolist(), boundary.iy.tolist()))
    assert len(pixels) == SMALL_BOUNDARY_COUNT
    dist = small_grid.boundary_distance()
    assert all(dist[ix, iy] == 0 for ix, iy in pixels)


def test_boundary_lookup(small_grid):
    """Test side offsets, arcs and pixel lookup."""
    boundary = grid.build_boundary(small_grid)
    top = boundary.pixel_at(grid.Side.TOP, 0.85)
    assert (boundary.ix[top], boundary.iy[top]) == (8, 15)
    left = boundary.pixel_at(grid.Side.LEFT, 0.85)
    assert (boundary.ix[left], boundary.iy[left]) == (0, 8)
    assert boundary.side_arc(grid.Side.TOP, 0.85) == pytest.approx(boundary.arc[top])
    assert boundary.arc_distance(0.1, 6.3) == pytest.approx(0.2)
    with pytest.raises(GeometryError):
        boundary.pixel_at(grid.Side.BOTTOM, 2.0)
    with pytest.raises(GeometryError):
        boundary.index_of(5, 5)


def test_time_grid():
    """Test derived time quantities."""
    tg = grid.TimeGrid(dt_rec=0.2, n_rec=100, substeps=4)
    assert tg.dt_sub == pytest.approx(0.05)
    assert tg.n_substeps == 400
    assert tg.horizon == pytest.approx(20.0)
    assert tg.times[0] == pytest.approx(0.2)
    assert tg.recorded_index(0.2) == 0
    assert tg.recorded_index(10.0) == 49
    assert tg.recorded_index(20.0) == 99
    for bad in (0.0, 0.3, 20.2):
        with pytest.raises(GeometryError):
            tg.recorded_index(bad)


def test_cfl():
    """Test the Courant bound."""
    spec = grid.GridSpec(50, 50, 0.1)
    grid.TimeGrid(0.2, 10, substeps=4).check_cfl(spec)
    with pytest.raises(CflError):
        grid.TimeGrid(0.2, 10, substeps=1).check_cfl(spec)
    with pytest.raises(CflError):
        grid.TimeGrid(0.2, 10, substeps=4).check_cfl(spec, cfl_max=0.4)


def test_phantom_layers():
    """Test painting of the clear layer and obstacles."""
    spec = grid.GridSpec(50, 50, 0.1)
    phantom = grid.PhantomSpec(
        a_b=0.1,
        b_b=100.0,
        clear_layer=grid.ClearLayer(),
        obstacles=(grid.Obstacle(center=(2.5, 2.5), radius=0.3, a=0.5),),
    )
    medium = grid.build_phantom(phantom, spec)
    dist = spec.boundary_distance()
    ring = (dist >= 5) & (dist < 8)
    assert np.array_equal(medium.clear_mask, ring)
    assert np.all(medium.a[ring] == 0.01)
    assert np.all(medium.b[ring] == 0.01)
    assert medium.a[25, 25] == 0.5
    assert medium.a[0, 0] == 0.1
    assert np.array_equal(medium.frozen_mask, medium.clear_mask)

    background = grid.build_phantom(phantom.background(), spec)
    assert np.all(background.a[~ring] == 0.1)


def test_disc_mask_strict():
    """Test that pixel centers on the circle are outside."""
    spec = grid.GridSpec(10, 10, 1.0)
    mask = grid.disc_mask(spec, (0.5, 0.5), 1.0)
    assert mask[0, 0]
    assert not mask[1, 0]
    assert not mask[0, 1]


def test_phantom_overlap():
    """Test obstacle overlapping the clear ring."""
    spec = grid.GridSpec(50, 50, 0.1)
    phantom = grid.PhantomSpec(
        clear_layer=grid.ClearLayer(),
        obstacles=(grid.Obstacle(center=(0.55, 2.5), radius=0.2, a=0.5),),
    )
    with pytest.raises(GeometryError):
        grid.build_phantom(phantom, spec)


def test_phantom_rejects_values():
    """Test negative radius and non-positive values."""
    spec = grid.GridSpec(10, 10, 0.1)
    with pytest.raises(GeometryError):
        grid.build_phantom(grid.PhantomSpec(a_b=0.0), spec)
    with pytest.raises(GeometryError):
        grid.build_phantom(
            grid.PhantomSpec(obstacles=(grid.Obstacle((0.5, 0.5), -0.1, 0.5),)), spec
        )


def test_freeze_exterior():
    """Test freezing the cells outside the clear ring."""
    spec = grid.GridSpec(50, 50, 0.1)
    layer = grid.ClearLayer()
    medium = grid.build_phantom(grid.PhantomSpec(clear_layer=layer), spec)
    frozen = grid.freeze_exterior(medium, layer)
    dist = spec.boundary_distance()
    assert np.array_equal(frozen.frozen_mask, dist < 8)
    assert np.array_equal(frozen.update_mask, dist >= 8)
    assert grid.freeze_exterior(medium, None) is medium


def test_medium_validation(small_grid):
    """Test rejection of inconsistent media."""
    shape = small_grid.shape
    clear = np.zeros(shape, dtype=bool)
    clear[3, 3] = True
    with pytest.raises(GeometryError):
        grid.MediumFields(
            grid=small_grid,
            a=np.full(shape, 0.1),
            b=np.full(shape, 1.0),
            clear_mask=clear,
            frozen_mask=np.zeros(shape, dtype=bool),
        )
    with pytest.raises(GeometryError):
        grid.MediumFields(
            grid=small_grid,
            a=np.full(shape, -0.1),
            b=np.full(shape, 1.0),
            clear_mask=np.zeros(shape, dtype=bool),
            frozen_mask=np.zeros(shape, dtype=bool),
        )


@pytest.mark.parametrize(("nx", "ny", "count"), [(4, 4, 12), (50, 50, 196), (16, 9, 46)])
def test_boundary_count(nx, ny, count):
    """Test the number of boundary pixels."""
    assert grid.build_boundary(grid.GridSpec(nx, ny, 0.1)).count == count


@pytest.mark.parametrize("nx", range(4, 129))
def test_boundary_count_all_sizes(nx):
    """Test 2 nx + 2 ny - 4 pixels and 2 nx + 2 ny faces for every ny in [4, 128]."""
    for ny in range(4, 129):
        boundary = grid.build_boundary(grid.GridSpec(nx, ny, 0.1))
        assert boundary.count == 2 * nx + 2 * ny - 4, ny
        assert len(boundary.face_pixel) == 2 * nx + 2 * ny, ny


def test_four_directions():
    """Test the axis quadrature."""
    quad = grid.make_quadrature(4)
    assert quad.weight * quad.n_dirs == pytest.approx(2 * math.pi)
    assert quad.directions.tolist() == [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]


def test_homogeneous_and_empty_disc():
    """Test a phantom without clear regions and a radius-0 obstacle."""
    spec = grid.GridSpec(20, 20, 0.1)
    plain = grid.build_phantom(grid.PhantomSpec(), spec)
    assert np.all(plain.a == 0.1)
    assert np.all(plain.b == 100.0)
    assert not plain.clear_mask.any()
    empty = grid.build_phantom(
        grid.PhantomSpec(obstacles=(grid.Obstacle((1.0, 1.0), 0.0, 0.5),)), spec
    )
    assert np.array_equal(empty.a, plain.a)


def test_frozen_distance(small_grid):
    """Test the distance in cells to the nearest frozen cell."""
    shape = small_grid.shape
    frozen = np.zeros(shape, dtype=bool)
    medium = grid.MediumFields(
        grid=small_grid,
        a=np.full(shape, 0.1),
        b=np.full(shape, 1.0),
        clear_mask=np.zeros(shape, dtype=bool),
        frozen_mask=frozen,
    )
    assert np.all(np.isinf(medium.frozen_distance))

    frozen = frozen.copy()
    frozen[0, :] = True
    frozen[5, 5] = True
    distance = replace(medium, frozen_mask=frozen).frozen_distance
    assert not distance[frozen].any()
    assert distance[1, 9] == 1.0
    assert distance[4, 9] == 4.0
    assert distance[6, 6] == pytest.approx(math.sqrt(2))
