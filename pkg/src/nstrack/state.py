"""Discrete Navier-Stokes state equations and their linearization.

The momentum residual for ``(y, p)`` with load ``f`` is

    nu (grad y, grad v) + b(y; y, v) - (p, div v) - (f, v),

and Newton's method linearizes it with ``nu K + C1(y) + C2(y)``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import (apply_dirichlet, assemble_convection, assemble_divergence,
                       assemble_load, assemble_mass_velocity, assemble_viscous, eliminate,
                       pressure_integrals, SaddleSystem)
from .elements import FeFunction
from .errors import InputError, NonlinearSolveError, SolverError
from .linalg import SaddleSolver

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 25
MAX_CONTINUATION = 6


class Discretization:
    """Mesh- and viscosity-dependent matrices shared by all solves on one space."""

    def __init__(self, space, nu):
        if nu <= 0:
            raise InputError("viscosity must be positive")
        self.space = space
        self.nu = float(nu)
        self.mask = space.dirichlet_mask
        self.K = assemble_viscous(space, self.nu)
        self.B = -assemble_divergence(space)       # continuity row: -(q, div y) = 0
        self.Bd = apply_dirichlet(SaddleSystem(self.K, self.B, np.zeros(self.K.shape[0]),
                                               np.zeros(self.B.shape[0])), space).B
        self.pweights = pressure_integrals(space)

    @classmethod
    def get(cls, space, nu):
        cache = space.__dict__.setdefault("_discretizations", {})
        key = float(nu)
        if key not in cache:
            cache[key] = cls(space, nu)
        return cache[key]

    def convection_vector(self, y):
        """``b(y; y, phi_i)`` for every velocity basis function."""
        s = self.space
        Y, GY = s.velocity_at_quadrature(y)
        conv = np.einsum("cqj,cqij->cqi", Y, GY)
        loc = np.einsum("cq,cqi,qb->cib", s.qweights, conv, s.vbasis)
        ns = s.scalar_dof_count
        dofs = s.cell_to_scalar_dofs.ravel()
        out = np.empty(2 * ns)
        out[:ns] = np.bincount(dofs, weights=loc[:, 0].ravel(), minlength=ns)
        out[ns:] = np.bincount(dofs, weights=loc[:, 1].ravel(), minlength=ns)
        return out

    def residual(self, y, p, f, convection=True):
        r_mom = self.K @ y + self.B.T @ p - f
        if convection:
            r_mom += self.convection_vector(y)
        r_mom[self.mask] = 0.0
        return r_mom, self.B @ y

    def jacobian(self, y):
        C1, C2 = assemble_convection(self.space, y)
        return self.K + C1 + C2

    def solver(self, A):
        return SaddleSolver(eliminate(A, self.mask), self.Bd, pressure_weights=self.pweights)

    def stokes_solver(self):
        if not hasattr(self, "_stokes"):
            self._stokes = self.solver(self.K)
        return self._stokes


@dataclass
class NewtonReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    damping_used: bool = False
    continuation_levels: list = field(default_factory=list)


class StateSolution:
    """Discrete velocity/pressure pair plus the Newton report.

    The linearized operator at ``y`` is factorized lazily by
    :meth:`linearized_solver` and cached; the adjoint solve reuses it.
    """

    def __init__(self, y, p, report, disc, load):
        self.y = y
        self.p = p
        self.report = report
        self.disc = disc
        self.load = load
        self._lin = None

    def linearized_solver(self):
        if self._lin is None:
            self._lin = self.disc.solver(self.disc.jacobian(self.y.coefficients))
        return self._lin


def _newton(disc, f, y, p, tol, max_iter, report):
    scale = tol * (1.0 + np.linalg.norm(f))
    for k in range(max_iter + 1):
        r_mom, r_cont = disc.residual(y, p, f)
        res = float(np.hypot(np.linalg.norm(r_mom), np.linalg.norm(r_cont)))
        report.residual_history.append(res)
        if not np.isfinite(res) or (k > 0 and res > 1e6 * max(report.residual_history[0], scale)):
            return None
        if res <= scale:
            report.iterations += k
            return y, p
        if k == max_iter:
            return None
        try:
            step = disc.solver(disc.jacobian(y)).solve(-r_mom, -r_cont)
        except SolverError:
            return None
        y = y + step.velocity
        p = p + step.pressure
    return None


def solve_state(space, nu, u=None, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER, initial=None,
                load=None):
    """Newton solve of the discrete state equations for the control ``u``.

    ``initial`` is an optional (y, p) coefficient pair used as warm start; by
    default Newton starts from the Stokes solution. If Newton fails, the
    problem is solved for ``nu * 2**m`` and ``nu`` is halved back down.
    """
    if tol <= 0:
        raise InputError("tolerance must be positive")
    disc = Discretization.get(space, nu)
    f = assemble_load(space, u) if load is None else np.asarray(load, dtype=float)
    f = np.where(disc.mask, 0.0, f)
    report = NewtonReport()

    if initial is not None:
        y0, p0 = (np.asarray(v, dtype=float).copy() for v in initial)
    else:
        st = disc.stokes_solver().solve(f)
        y0, p0 = st.velocity, st.pressure
    out = _newton(disc, f, y0, p0, tol, max_iter, report)

    m = 1
    while out is None and m <= MAX_CONTINUATION:
        report.damping_used = True
        log.info("Newton failed at nu=%g; continuation from nu*2^%d", nu, m)
        chain = [nu * 2.0 ** j for j in range(m, -1, -1)]
        report.continuation_levels = chain
        guess = None
        for level_nu in chain:
            level = Discretization.get(space, level_nu)
            if guess is None:
                st = level.stokes_solver().solve(f)
                guess = (st.velocity, st.pressure)
            guess = _newton(level, f, guess[0], guess[1], tol, max_iter, report)
            if guess is None:
                break
        out = guess
        m += 1

    if out is None:
        raise NonlinearSolveError(f"Newton did not converge for nu={nu}", report=report)
    report.converged = True
    y, p = out
    p = p - (disc.pweights @ p) / disc.pweights.sum()
    return StateSolution(FeFunction(space, "velocity", y), FeFunction(space, "pressure", p),
                         report, disc, f)


def solve_linearized(space, at_y, g, nu, solver=None):
    """Solve the linearized state equations at ``at_y`` for the load vector ``g``.

    Returns ``(phi, zeta)``; the result is the derivative of the discrete
    control-to-state map at ``at_y`` applied to the control that produced ``g``.
    """
    disc = Discretization.get(space, nu)
    if solver is None:
        coef = at_y.coefficients if isinstance(at_y, FeFunction) else np.asarray(at_y, dtype=float)
        solver = disc.solver(disc.jacobian(coef))
    g = np.where(disc.mask, 0.0, np.asarray(g, dtype=float))
    sol = solver.solve(g)
    return FeFunction(space, "velocity", sol.velocity), FeFunction(space, "pressure", sol.pressure)


def discrete_dual_norm(space, f):
    """``sup_v (f, v) / ||grad v||`` over discrete velocities vanishing on the boundary."""
    disc = Discretization.get(space, 1.0)
    mask = disc.mask
    K = disc.K[~mask][:, ~mask].tocsc()
    fi = np.asarray(f, dtype=float)[~mask]
    return float(np.sqrt(fi @ spla.spsolve(K, fi)))


def h1_seminorm(space, y):
    disc = Discretization.get(space, 1.0)
    c = y.coefficients if isinstance(y, FeFunction) else y
    return float(np.sqrt(c @ (disc.K @ c)))


def velocity_mass(space):
    cache = space.__dict__.setdefault("_mass", {})
    if "velocity" not in cache:
        cache["velocity"] = assemble_mass_velocity(space)
    return cache["velocity"]
