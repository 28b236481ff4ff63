import json

import numpy as np
import pytest

from cavityeig.grid import CONSTRAINED, BoxDomain, DofKind, Grid, build_dof_space, build_grid


def test_box_domain_validation():
    with pytest.raises(ValueError):
        BoxDomain((0, 0, 0), (1.0, 0.0, 1.0))
    assert BoxDomain.cube(2.0).volume == pytest.approx(8.0)


def test_grid_needs_two_cells_per_axis():
    with pytest.raises(ValueError):
        build_grid(BoxDomain.cube(), (1, 4, 4))


def test_node_numbering_is_x_fastest(box_grid):
    x = box_grid.node_coords()
    h = box_grid.spacing
    assert np.allclose(x[1] - x[0], [h[0], 0, 0])
    nx, ny, _ = box_grid.node_shape
    assert np.allclose(x[nx] - x[0], [0, h[1], 0])
    assert np.allclose(x[nx * ny] - x[0], [0, 0, h[2]])
    assert np.allclose(x[0], box_grid.domain.origin)


def test_cell_nodes_local_offsets(box_grid):
    cn = box_grid.cell_nodes()
    assert cn.shape == (box_grid.n_cells, 8)
    x = box_grid.node_coords()
    for cell in (0, 7, box_grid.n_cells - 1):
        base = x[cn[cell, 0]]
        for a in (0, 1):
            for b in (0, 1):
                for c in (0, 1):
                    offset = np.array([a, b, c]) * box_grid.spacing
                    assert np.allclose(x[cn[cell, a + 2 * b + 4 * c]], base + offset)


def test_every_cell_volume_adds_up(box_grid):
    assert box_grid.cell_volume * box_grid.n_cells == pytest.approx(box_grid.domain.volume)


def test_locate_face_points_go_to_lower_cell(cube4):
    h = cube4.spacing[0]
    (i, j, k), local = cube4.locate((h, 0.5 * h, 0.5 * h))
    assert (i, j, k) == (0, 0, 0)
    assert np.allclose(local, [1.0, 0.5, 0.5])
    (i, _, _), local = cube4.locate((np.pi, 0.1, 0.1))
    assert i == 3 and local[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        cube4.locate((-0.1, 0.0, 0.0))


def test_json_round_trip(box_grid):
    back = Grid.from_json(json.dumps(box_grid.to_json()))
    assert back == box_grid


def test_scalar_space_counts_interior_nodes(box_grid):
    space = build_dof_space(box_grid, DofKind.SCALAR_DIRICHLET)
    cx, cy, cz = box_grid.cells
    assert space.n_free == (cx - 1) * (cy - 1) * (cz - 1)


def test_vector_space_frees_normal_components_on_faces(box_grid):
    space = build_dof_space(box_grid, DofKind.VECTOR_TANGENTIAL_ZERO)
    cx, cy, cz = box_grid.cells
    expected = (cx + 1) * (cy - 1) * (cz - 1) + (cx - 1) * (cy + 1) * (cz - 1) + (cx - 1) * (cy - 1) * (cz + 1)
    assert space.n_free == expected
    # node 1 sits on the faces y=min and z=min: only nothing tangential to both may be free
    mask = space.free_index.reshape(-1, 3)
    assert np.all(mask[1] == CONSTRAINED)
    nx, ny, _ = box_grid.node_shape
    # a node on the x=min face only keeps its x component
    node = 0 + nx * (1 + ny * 1)
    assert mask[node, 0] != CONSTRAINED and np.all(mask[node, 1:] == CONSTRAINED)


def test_expand_restrict_round_trip(box_grid):
    rng = np.random.default_rng(0)
    for kind in DofKind:
        space = build_dof_space(box_grid, kind)
        c = rng.standard_normal(space.n_free)
        nodal = space.expand(c)
        assert np.array_equal(space.restrict(nodal), c)
        assert np.count_nonzero(nodal) == space.n_free
