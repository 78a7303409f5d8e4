import numpy as np
import pytest

from nstrack.errors import InputError, OutOfDomainError
from nstrack.mesh import build_structured, locate_point, refine_uniform, write_vtk


def test_minimal_mesh_counts():
    m = build_structured(1, 1)
    assert (m.num_vertices, m.num_cells, m.num_edges) == (4, 2, 5)


def test_two_by_two_counts_and_euler():
    m = build_structured(2, 2)
    assert (m.num_vertices, m.num_cells, m.num_edges) == (9, 8, 16)
    assert m.num_vertices - m.num_edges + m.num_cells + 1 == 2


@pytest.mark.parametrize("args", [(0, 1), (1, 0), (-2, 3)])
def test_invalid_counts(args):
    with pytest.raises(InputError):
        build_structured(*args)


def test_invalid_rectangle():
    with pytest.raises(InputError):
        build_structured(2, 2, (0.0, 0.0, 0.0, 1.0))


def test_refine_matches_structured():
    m = build_structured(1, 1)
    r = refine_uniform(m)
    assert r == build_structured(2, 2)
    assert r.h_max == pytest.approx(m.h_max / 2, rel=1e-15)
    assert r.num_cells == 4 * m.num_cells


def test_cell_ordering_lower_triangle_first():
    m = build_structured(1, 1)
    lower = m.vertices[m.cells[0]]
    assert np.all(lower[:, 1] <= lower[:, 0] + 1e-15)


def test_locate_lower_triangle():
    loc = locate_point(build_structured(1, 1), (0.6, 0.2))
    assert loc.cell_index == 0
    assert sum(loc.barycentric) == pytest.approx(1.0, abs=1e-15)


def test_locate_diagonal_tie_break():
    assert locate_point(build_structured(1, 1), (0.5, 0.5)).cell_index == 0


def test_locate_outside():
    with pytest.raises(OutOfDomainError):
        locate_point(build_structured(1, 1), (2.0, 2.0))


def test_locate_barycenters():
    m = build_structured(5, 3, (0.0, -1.0, 2.0, 1.0))
    for k, c in enumerate(m.centroids()):
        loc = locate_point(m, c)
        assert loc.cell_index == k
        np.testing.assert_allclose(loc.barycentric, [1 / 3] * 3, atol=1e-12)


def test_refinement_preserves_boundary():
    m = build_structured(3, 2, (1.0, 2.0, 4.0, 3.0))
    r = refine_uniform(m)
    x0, y0, x1, y1 = m.rect
    bv = r.vertices[r.boundary_vertices]
    on = np.isclose(bv[:, 0], x0) | np.isclose(bv[:, 0], x1) | \
        np.isclose(bv[:, 1], y0) | np.isclose(bv[:, 1], y1)
    assert np.all(on)


def test_vtk_export(tmp_path):
    m = build_structured(2, 1)
    path = tmp_path / "m.vtk"
    write_vtk(path, m, point_data={"p": np.arange(m.num_vertices) / 3.0},
              cell_data={"u": np.ones((m.num_cells, 2))})
    text = path.read_text()
    assert "UNSTRUCTURED_GRID" in text
    assert "0.33333333333333331" in text
    assert f"CELLS {m.num_cells}" in text
