import numpy as np
import pytest

from nstrack.assembly import assemble_load
from nstrack.elements import ElementPair, interpolate
from nstrack.errors import InputError, NonlinearSolveError
from nstrack.experiments import continuity_and_gauge
from nstrack.manufactured import manufactured_solution
from nstrack.state import Discretization, discrete_dual_norm, h1_seminorm, solve_linearized, solve_state

from conftest import cached_space


def test_zero_control_gives_zero_state(pair):
    st = solve_state(cached_space(6, pair), 1.0, None)
    assert np.abs(st.y.coefficients).max() == 0.0
    assert np.abs(st.p.coefficients).max() == 0.0
    assert st.report.converged and st.report.iterations <= 1


@pytest.mark.parametrize("bad", [{"nu": 0.0}, {"nu": -1.0}, {"tol": 0.0}])
def test_preconditions(bad):
    kw = {"nu": 1.0, "tol": 1e-10}
    kw.update(bad)
    with pytest.raises(InputError):
        solve_state(cached_space(2, "th"), kw["nu"], None, tol=kw["tol"])


def test_newton_quadratic_tail(pair):
    s = cached_space(16, pair)
    st = solve_state(s, 1.0, np.array([1.0, 1.0]))
    rep = st.report
    assert rep.converged and not rep.damping_used
    assert rep.iterations <= 6
    h = rep.residual_history
    assert all(b < a for a, b in zip(h[1:], h[2:]))
    for a, b in zip(h, h[1:]):
        if b > 1e-14:
            assert b / a ** 2 < 1e3


def test_newton_strong_convection_quadratic():
    s = cached_space(16, "th")
    st = solve_state(s, 0.02, lambda x, y: (10 * np.sin(3 * y), 5 + 0 * x))
    h = st.report.residual_history
    assert not st.report.damping_used
    assert all(b < a for a, b in zip(h[1:], h[2:]))
    assert h[-1] / h[-2] ** 2 < 1e3


def test_continuity_and_gauge(pair):
    s = cached_space(8, pair)
    st = solve_state(s, 1.0, lambda x, y: (np.sin(4 * y), x * y))
    div, gauge = continuity_and_gauge(s, st.y, st.p)
    assert div <= 1e-9
    assert gauge <= 1e-12
    assert np.abs(st.y.coefficients[s.dirichlet_mask]).max() == 0.0


def test_continuation_path():
    s = cached_space(12, "th")
    u = lambda x, y: (2 * np.sin(2 * np.pi * y), 2 * np.cos(2 * np.pi * x))  # noqa: E731
    st = solve_state(s, 0.004, u)
    assert st.report.converged and st.report.damping_used
    assert st.report.continuation_levels[-1] == 0.004
    r_mom, r_cont = st.disc.residual(st.y.coefficients, st.p.coefficients, st.load)
    assert np.hypot(np.linalg.norm(r_mom), np.linalg.norm(r_cont)) <= 1e-10 * (
        1 + np.linalg.norm(st.load))
    assert continuity_and_gauge(s, st.y, st.p)[0] <= 1e-9


def test_nonconvergence_reports():
    s = cached_space(12, "th")
    u = lambda x, y: (np.sin(2 * np.pi * y), np.cos(2 * np.pi * x))  # noqa: E731
    with pytest.raises(NonlinearSolveError) as info:
        solve_state(s, 0.003, u, max_iter=8)
    assert info.value.report is not None
    assert not info.value.report.converged


def test_manufactured_h1_rate():
    ms = manufactured_solution(1.0)
    errs = []
    for n in (8, 16):
        s = cached_space(n, "th")
        st = solve_state(s, 1.0, ms.load)
        _, G = s.velocity_at_quadrature(st.y)
        X = s.qpoints
        gx = np.array(ms.velocity_grad(X[..., 0], X[..., 1])).transpose(2, 3, 0, 1)
        errs.append(np.sqrt(s.integrate(np.sum((G - gx) ** 2, axis=(-1, -2)))))
    assert 1.8 <= np.log2(errs[0] / errs[1]) <= 2.2


def test_manufactured_load_is_consistent():
    ms = manufactured_solution(2.0)
    y = ms.velocity(0.3, 0.6)
    g = ms.velocity_grad(0.3, 0.6)
    assert g[0][0] + g[1][1] == pytest.approx(0.0, abs=1e-15)
    assert ms.velocity(0.0, 0.4)[0] == pytest.approx(0.0, abs=1e-15)
    assert np.isfinite(y).all()
    assert ms.pressure(0.5, 0.1) == pytest.approx(0.0, abs=1e-15)


def test_stability_bound(pair):
    s = cached_space(8, pair)
    for nu, u in ((1.0, lambda x, y: (np.sin(3 * x), y)), (0.5, np.array([0.75, -0.75]))):
        st = solve_state(s, nu, u)
        f = assemble_load(s, u)
        f[s.dirichlet_mask] = 0.0
        assert h1_seminorm(s, st.y) <= 1.05 * discrete_dual_norm(s, f) / nu


def test_linearized_at_zero_is_stokes(pair):
    s = cached_space(6, pair)
    g = assemble_load(s, lambda x, y: (y, -x * x))
    phi, _ = solve_linearized(s, np.zeros(s.velocity_dof_count), g, 1.0)
    g[s.dirichlet_mask] = 0.0
    ref = Discretization.get(s, 1.0).stokes_solver().solve(g).velocity
    np.testing.assert_allclose(phi.coefficients, ref, atol=1e-13 * np.abs(ref).max())


def test_linearized_zero_rhs(pair):
    s = cached_space(6, pair)
    y = interpolate(s, "velocity", lambda x, yy: (np.sin(np.pi * x) * yy, x))
    phi, zeta = solve_linearized(s, y, np.zeros(s.velocity_dof_count), 1.0)
    assert np.abs(phi.coefficients).max() == 0.0
    assert np.abs(zeta.coefficients).max() == 0.0


@pytest.mark.parametrize("pair_", [ElementPair.TaylorHood, ElementPair.Mini])
def test_linearized_is_directional_derivative(pair_):
    s = cached_space(8, pair_.value)
    nu = 0.2
    u = lambda x, y: (3 * np.sin(2 * y), 2 + x)  # noqa: E731
    g = lambda x, y: (np.cos(x), x * y)  # noqa: E731
    base = solve_state(s, nu, u, tol=1e-13)
    phi, _ = solve_linearized(s, base.y, assemble_load(s, g), nu)
    M = s.velocity_at_quadrature

    def l2(c):
        V, _ = M(c)
        return np.sqrt(s.integrate(np.sum(V ** 2, axis=-1)))

    errs = []
    for eps in (0.2, 0.1):
        up = solve_state(s, nu, lambda x, y: tuple(a + eps * b for a, b in zip(u(x, y), g(x, y))),
                         tol=1e-13)
        um = solve_state(s, nu, lambda x, y: tuple(a - eps * b for a, b in zip(u(x, y), g(x, y))),
                         tol=1e-13)
        fd = (up.y.coefficients - um.y.coefficients) / (2 * eps)
        errs.append(l2(fd - phi.coefficients))
    # second-order truncation: halving eps quarters the error
    assert 3.5 < errs[0] / errs[1] < 4.5
