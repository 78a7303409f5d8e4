import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp

from nstrack.assembly import (SaddleSystem, apply_dirichlet, assemble_convection,
                              assemble_dirac_rhs, assemble_divergence, assemble_load,
                              assemble_mass_velocity, assemble_viscous, export_matrix_market,
                              pressure_integrals)
from nstrack.elements import ElementPair, build_space, evaluate_basis, interpolate
from nstrack.errors import InputError
from nstrack.mesh import build_structured, locate_point

from conftest import cached_space


def test_viscous_symmetry_kernel_scaling(pair):
    s = cached_space(4, pair)
    K = assemble_viscous(s, 1.0)
    assert abs(K - K.T).max() <= 1e-14
    const = interpolate(s, "velocity", lambda x, y: (1.0, -2.0))
    assert np.abs(K @ const.coefficients).max() <= 1e-12
    assert abs(assemble_viscous(s, 2.0) - 2 * K).max() == 0.0


def test_viscous_requires_positive_nu():
    with pytest.raises(InputError):
        assemble_viscous(cached_space(2, "th"), 0.0)


def test_divergence_examples(pair):
    s = cached_space(4, pair)
    B = assemble_divergence(s)
    assert B.shape == (s.pressure_dof_count, s.velocity_dof_count)
    trans = interpolate(s, "velocity", lambda x, y: (1.0, 0.0))
    assert np.abs(B @ trans.coefficients).max() <= 1e-13
    radial = interpolate(s, "velocity", lambda x, y: (x, y))
    np.testing.assert_allclose(B @ radial.coefficients, 2 * pressure_integrals(s), atol=1e-14)


def test_divergence_row_sums(pair):
    s = cached_space(3, pair)
    B = assemble_divergence(s)
    colsum = np.asarray(B.sum(axis=0)).ravel()
    # column sums equal int div phi_v: zero for basis functions vanishing on the boundary
    interior = ~s.dirichlet_mask
    assert np.abs(colsum[interior]).max() <= 1e-14


def test_convection_zero_and_homogeneity(pair):
    s = cached_space(3, pair)
    zero = np.zeros(s.velocity_dof_count)
    C1, C2 = assemble_convection(s, zero)
    assert C1.nnz == 0 or abs(C1).max() == 0.0
    assert C2.nnz == 0 or abs(C2).max() == 0.0
    y = interpolate(s, "velocity", lambda x, yy: (np.sin(x) * yy, x - yy))
    A1, A2 = assemble_convection(s, y)
    B1, B2 = assemble_convection(s, 2 * y.coefficients)
    assert abs(B1 - 2 * A1).max() <= 1e-14
    assert abs(B2 - 2 * A2).max() <= 1e-14


def test_csr_canonical(pair):
    s = cached_space(3, pair)
    y = interpolate(s, "velocity", lambda x, yy: (x, yy))
    for M in (assemble_viscous(s, 1.0), assemble_divergence(s), *assemble_convection(s, y)):
        assert isinstance(M, sp.csr_matrix)
        assert M.has_sorted_indices
        for r in range(M.shape[0]):
            idx = M.indices[M.indptr[r]:M.indptr[r + 1]]
            assert np.all(np.diff(idx) > 0)


def test_p1_mass_on_reference_triangle():
    # MINI vertex functions are the P1 basis; cell 0 of the 1x1 mesh is a unit right triangle
    s = build_space(build_structured(1, 1), ElementPair.Mini)
    phi = s.vbasis[:, :3]
    local = np.einsum("q,qa,qb->ab", s.qweights[0], phi, phi)
    np.testing.assert_allclose(local, (0.5 / 12) * (np.ones((3, 3)) + np.eye(3)), rtol=1e-14)
    M = assemble_mass_velocity(s)
    nv = s.mesh.num_vertices
    assert M[:nv, :nv].sum() == pytest.approx(1.0, rel=1e-14)


def test_mass_symmetric_positive(pair):
    M = assemble_mass_velocity(cached_space(3, pair))
    assert abs(M - M.T).max() <= 1e-14
    assert np.linalg.eigvalsh(M.toarray()).min() > 0


def test_dirac_partition_of_unity(pair):
    s = cached_space(4, pair)
    c = np.array([0.7, -1.3])
    rhs = assemble_dirac_rhs(s, [(0.31, 0.42)], [c])
    ns = s.scalar_dof_count
    unity = ns if pair is ElementPair.TaylorHood else s.mesh.num_vertices
    # the MINI bubble adds its own value at the point on top of the P1 partition
    assert rhs[:unity].sum() == pytest.approx(c[0], rel=1e-14)
    assert rhs[ns:ns + unity].sum() == pytest.approx(c[1], rel=1e-14)


def test_dirac_at_node(pair):
    s = cached_space(4, pair)
    k = 12   # an interior vertex
    assert not s.dirichlet_mask[k]
    rhs = assemble_dirac_rhs(s, [s.mesh.vertices[k]], [(2.0, 3.0)])
    nz = np.flatnonzero(np.abs(rhs) > 1e-14)
    ns = s.scalar_dof_count
    np.testing.assert_array_equal(nz, [k, ns + k])
    np.testing.assert_allclose(rhs[nz], [2.0, 3.0], rtol=1e-14)


def test_dirac_at_barycenter_p2():
    s = cached_space(4, "th")
    cell = 9
    c = np.array([1.0, -2.0])
    rhs = assemble_dirac_rhs(s, [s.mesh.centroids()[cell]], [c])
    dofs = s.cell_to_scalar_dofs[cell]
    ns = s.scalar_dof_count
    np.testing.assert_allclose(rhs[dofs[:3]], -c[0] / 9, rtol=1e-12)
    np.testing.assert_allclose(rhs[dofs[3:]], 4 * c[0] / 9, rtol=1e-12)
    np.testing.assert_allclose(rhs[ns + dofs[3:]], 4 * c[1] / 9, rtol=1e-12)
    others = np.setdiff1d(np.arange(ns), dofs)
    assert np.abs(rhs[others]).max() == 0.0


@pytest.mark.parametrize("point", [(0.0, 0.5), (1.0, 1.0), (1.2, 0.5)])
def test_dirac_rejects_boundary_points(point):
    with pytest.raises(InputError):
        assemble_dirac_rhs(cached_space(2, "th"), [point], [(1.0, 0.0)])


def test_load_examples(pair):
    s = cached_space(3, pair)
    assert np.abs(assemble_load(s, None)).max() == 0.0
    assert np.abs(assemble_load(s, np.zeros(2))).max() == 0.0


def test_load_single_cell():
    s = build_space(build_structured(1, 1), ElementPair.TaylorHood)
    u = np.array([[1.0, 0.0], [0.0, 0.0]])
    f = assemble_load(s, u)
    w = s.qweights[0]
    phi = s.vbasis
    expected = np.zeros(s.scalar_dof_count)
    np.add.at(expected, s.cell_to_scalar_dofs[0], w @ phi)
    np.testing.assert_allclose(f[:s.scalar_dof_count], expected, atol=1e-16)
    assert np.abs(f[s.scalar_dof_count:]).max() == 0.0


def _system(s):
    A = assemble_viscous(s, 1.0)
    B = -assemble_divergence(s)
    f = np.random.default_rng(0).random(A.shape[0])
    return SaddleSystem(A, B, f, np.zeros(B.shape[0]))


def test_dirichlet_elimination(pair):
    s = cached_space(3, pair)
    sys0 = _system(s)
    sys1 = apply_dirichlet(sys0, s)
    mask = s.dirichlet_mask
    A = sys1.A.toarray()
    np.testing.assert_array_equal(A[np.ix_(mask, mask)], np.eye(mask.sum()))
    assert np.abs(A[np.ix_(mask, ~mask)]).max() == 0.0
    assert np.abs(A[np.ix_(~mask, mask)]).max() == 0.0
    np.testing.assert_array_equal(A[np.ix_(~mask, ~mask)],
                                  sys0.A.toarray()[np.ix_(~mask, ~mask)])
    assert np.abs(sys1.B.toarray()[:, mask]).max() == 0.0
    assert np.abs(sys1.f[mask]).max() == 0.0
    sys2 = apply_dirichlet(sys1, s)
    assert abs(sys2.A - sys1.A).max() == 0.0
    assert abs(sys2.B - sys1.B).max() == 0.0
    np.testing.assert_array_equal(sys2.f, sys1.f)


def test_saddle_shape_check():
    s = cached_space(2, "th")
    with pytest.raises(InputError):
        SaddleSystem(assemble_viscous(s, 1.0), assemble_divergence(s), np.zeros(3), np.zeros(9))


def test_matrix_market_roundtrip(tmp_path):
    K = assemble_viscous(cached_space(2, "mini"), 1.0)
    path = tmp_path / "k.mtx"
    export_matrix_market(path, K)
    back = scipy.io.mmread(path)
    assert abs(sp.csr_matrix(back) - K).max() == 0.0


def test_point_basis_uses_tie_broken_cell():
    s = cached_space(2, "th")
    loc = locate_point(s.mesh, (0.25, 0.25))
    vals, _ = evaluate_basis(s.pair, "velocity_scalar", np.array(loc.barycentric))
    rhs = assemble_dirac_rhs(s, [(0.25, 0.25)], [(1.0, 0.0)])
    np.testing.assert_allclose(rhs[s.cell_to_scalar_dofs[loc.cell_index]], vals, atol=1e-15)
