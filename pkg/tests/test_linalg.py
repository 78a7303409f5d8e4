import numpy as np
import pytest
import scipy.sparse as sp

from nstrack.assembly import (SaddleSystem, apply_dirichlet, assemble_divergence, assemble_load,
                              assemble_viscous, pressure_integrals)
from nstrack.errors import SolverError
from nstrack.linalg import SaddleSolver, available_backends, solve_saddle
from nstrack.manufactured import manufactured_solution

from conftest import cached_space


def stokes(space):
    sys0 = SaddleSystem(assemble_viscous(space, 1.0), -assemble_divergence(space),
                        np.zeros(space.velocity_dof_count), np.zeros(space.pressure_dof_count))
    return apply_dirichlet(sys0, space)


def test_identity_system():
    sys0 = SaddleSystem(sp.identity(2, format="csr"), sp.csr_matrix((0, 2)),
                        np.array([3.0, 4.0]), np.zeros(0))
    sol = solve_saddle(sys0)
    np.testing.assert_allclose(sol.velocity, [3.0, 4.0])
    assert sol.iterations == 0
    assert sol.pressure.shape == (0,)


def test_missing_gauge_is_singular(pair):
    s = cached_space(4, pair)
    sys0 = stokes(s)
    with pytest.raises(SolverError):
        SaddleSolver(sys0.A, sys0.B, gauge=None)


def test_unknown_gauge():
    s = cached_space(2, "th")
    sys0 = stokes(s)
    with pytest.raises(SolverError):
        SaddleSolver(sys0.A, sys0.B, gauge="MeanZeroRow")


@pytest.mark.parametrize("backend", available_backends())
def test_manufactured_stokes_residual(backend):
    s = cached_space(4, "th")
    ms = manufactured_solution(1.0)
    # Stokes load for the manufactured pair: drop the convection part
    from nstrack.elements import interpolate
    sys0 = stokes(s)
    f = assemble_load(s, ms.load)
    f[s.dirichlet_mask] = 0.0
    sol = SaddleSolver(sys0.A, sys0.B, pressure_weights=pressure_integrals(s),
                       backend=backend).solve(f)
    K = sp.bmat([[sys0.A, sys0.B.T], [sys0.B, None]], format="csr")
    rhs = np.r_[f, np.zeros(s.pressure_dof_count)]
    res = np.linalg.norm(K @ np.r_[sol.velocity, sol.pressure] - rhs)
    assert res / np.linalg.norm(rhs) <= 1e-10
    assert abs(res - sol.residual_norm) <= 1e-14
    assert sol.relative_residual <= 1e-10
    y = interpolate(s, "velocity", ms.velocity)
    assert np.abs(sol.velocity - y.coefficients).max() < 0.05 * np.abs(y.coefficients).max()


@pytest.mark.parametrize("n", [4, 16, 32])
@pytest.mark.parametrize("backend", available_backends())
def test_recovers_known_solution(pair, n, backend, rng):
    s = cached_space(n, pair)
    sys0 = stokes(s)
    w = pressure_integrals(s)
    x = rng.standard_normal(s.velocity_dof_count)
    x[s.dirichlet_mask] = 0.0
    p = rng.standard_normal(s.pressure_dof_count)
    f = sys0.A @ x + sys0.B.T @ p
    g = sys0.B @ x
    sol = SaddleSolver(sys0.A, sys0.B, pressure_weights=w, backend=backend).solve(f, g)
    p0 = p - (w @ p) / w.sum()
    assert np.linalg.norm(sol.velocity - x) <= 1e-9 * np.linalg.norm(x)
    assert np.linalg.norm(sol.pressure - p0) <= 1e-9 * np.linalg.norm(p0)
    assert abs(w @ sol.pressure) <= 1e-12 * np.linalg.norm(sol.pressure)


@pytest.mark.parametrize("backend", available_backends())
def test_transposed_solve(backend, rng):
    s = cached_space(8, "th")
    sys0 = stokes(s)
    n = s.velocity_dof_count
    N = sp.random(n, n, density=0.002, random_state=3, format="csr")
    keep = sp.diags((~s.dirichlet_mask).astype(float))
    A = (sys0.A + keep @ N @ keep).tocsr()
    solver = SaddleSolver(A, sys0.B, pressure_weights=pressure_integrals(s), backend=backend)
    f = rng.standard_normal(n)
    f[s.dirichlet_mask] = 0.0
    sol = solver.solve(f, transpose=True)
    K = sp.bmat([[A.T, sys0.B.T], [sys0.B, None]], format="csr")
    r = K @ np.r_[sol.velocity, sol.pressure] - np.r_[f, np.zeros(s.pressure_dof_count)]
    assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm(f)
    plain = solver.solve(f)
    assert np.linalg.norm(plain.velocity - sol.velocity) > 1e-8


def test_backends_agree(rng):
    if len(available_backends()) < 2:
        pytest.skip("only one sparse LU backend installed")
    s = cached_space(8, "mini")
    sys0 = stokes(s)
    f = rng.standard_normal(s.velocity_dof_count)
    f[s.dirichlet_mask] = 0.0
    w = pressure_integrals(s)
    a = SaddleSolver(sys0.A, sys0.B, pressure_weights=w, backend="pardiso").solve(f)
    b = SaddleSolver(sys0.A, sys0.B, pressure_weights=w, backend="superlu").solve(f)
    np.testing.assert_allclose(a.velocity, b.velocity, atol=1e-11 * np.abs(b.velocity).max())
