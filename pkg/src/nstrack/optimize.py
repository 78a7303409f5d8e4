"""Reduced cost, gradients, projections and optimization loops.

Two control discretizations are supported:

* fully discrete: one constant 2-vector per cell, arrays of shape (ncell, 2);
* semidiscrete: the control is not discretized. Iterates are stored by their
  values at the quadrature points, arrays of shape (ncell, nq, 2), which is all
  the discrete problem ever sees of them. Converged controls are returned in
  closure form ``u = clamp(-z / alpha)`` for a stored adjoint velocity ``z``.
"""

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .adjoint import TrackingData, mismatch, solve_adjoint
from .assembly import assemble_load, control_at_quadrature, trilinear
from .elements import ElementPair, build_space, evaluate_fe
from .errors import InputError, NonlinearSolveError, OptError, SolverError
from .state import solve_linearized, solve_state

log = logging.getLogger(__name__)

ARMIJO_SIGMA = 1e-4
# states inside the loop are solved tighter than standalone so gradients stay exact
OPT_NEWTON_TOL = 1e-12
MIN_STEP = 1e-12
# cost differences below this (relative) are treated as rounding
COST_NOISE = 100 * np.finfo(float).eps


class Scheme(enum.Enum):
    FullyDiscrete = "fully"
    Semidiscrete = "semi"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for member in cls:
            if value in (member.value, member.name):
                return member
        raise InputError(f"unknown control scheme {value!r}")


class Strategy(enum.Enum):
    ProjectedGradientArmijo = "pga"
    DampedFixedPoint = "fixed-point"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for member in cls:
            if value in (member.value, member.name):
                return member
        raise InputError(f"unknown optimization strategy {value!r}")


@dataclass(frozen=True, eq=False)
class ControlProblem:
    nu: float
    alpha: float
    lower: np.ndarray
    upper: np.ndarray
    tracking: TrackingData
    scheme: Scheme = Scheme.FullyDiscrete
    pair: ElementPair = ElementPair.TaylorHood

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).reshape(2)
        upper = np.asarray(self.upper, dtype=float).reshape(2)
        if not self.nu > 0:
            raise InputError("viscosity must be positive")
        if not self.alpha > 0:
            raise InputError("regularization parameter alpha must be positive")
        if not np.all(lower < upper):
            raise InputError("control bounds need lower < upper componentwise")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        object.__setattr__(self, "pair", ElementPair.parse(self.pair))


class ClosureControl:
    """Control ``x -> clamp(-z(x) / alpha, lower, upper)`` for a discrete velocity ``z``."""

    def __init__(self, z, alpha, lower, upper):
        self.z = z
        self.alpha = float(alpha)
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)

    def at_quadrature(self, space):
        Z, _ = space.velocity_at_quadrature(self.z)
        return project_box(-Z / self.alpha, self.lower, self.upper)

    def __call__(self, x, y):
        pts = np.stack([np.ravel(x), np.ravel(y)], axis=1)
        vals = project_box(-evaluate_fe(self.z.space, self.z, pts) / self.alpha,
                           self.lower, self.upper)
        return vals[:, 0].reshape(np.shape(x)), vals[:, 1].reshape(np.shape(x))


@dataclass
class OptimizationResult:
    control: object
    state: object
    adjoint: object
    cost_history: list = field(default_factory=list)
    vi_residual: float = np.inf
    iterations: int = 0
    converged: bool = False
    values: np.ndarray = None     # control in its array representation


def project_box(v, a, b):
    """Componentwise clamp of values (..., 2) or of a callable ``f(x, y)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if callable(v):
        def clamped(x, y):
            comps = v(x, y)
            return tuple(np.clip(c, a[i], b[i]) for i, c in enumerate(comps))
        return clamped
    return np.minimum(b, np.maximum(np.asarray(v, dtype=float), a))


def project_l2_piecewise_constant(space, f):
    """Cell averages (ncell, 2) of a control handle or velocity function."""
    F = control_at_quadrature(space, f)
    w = space.qweights
    return np.einsum("cq,cqk->ck", w, F) / w.sum(axis=1)[:, None]


def l2_inner(space, u, v):
    return float(space.integrate(np.einsum("cqk,cqk->cq", control_at_quadrature(space, u),
                                           control_at_quadrature(space, v))))


def l2_norm(space, u):
    return np.sqrt(max(l2_inner(space, u, u), 0.0))


def cost(problem, space, y, u):
    """``1/2 sum_t |y(t) - y_t|^2 + alpha/2 ||u||^2``."""
    mis = mismatch(space, y, problem.tracking)
    return 0.5 * float(np.sum(mis ** 2)) + 0.5 * problem.alpha * l2_norm(space, u) ** 2


class ReducedProblem:
    """Reduced functional ``j(u) = J(y(u), u)`` on a fixed mesh.

    Every state solve warm-starts Newton from the most recent state.
    """

    def __init__(self, problem, mesh, quad_degree=6, newton_tol=OPT_NEWTON_TOL):
        self.problem = problem
        self.space = build_space(mesh, problem.pair, quad_degree)
        problem.tracking.check_interior(mesh)
        self.newton_tol = newton_tol
        self._warm = None

    # -- control representation --------------------------------------------
    def as_values(self, u):
        """Array representation of a control handle for the current scheme."""
        if self.problem.scheme is Scheme.FullyDiscrete:
            arr = np.asarray(u, dtype=float) if isinstance(u, np.ndarray) else None
            if arr is not None and arr.shape == (self.space.mesh.num_cells, 2):
                return arr
            return project_l2_piecewise_constant(self.space, u)
        return np.array(control_at_quadrature(self.space, u))

    def initial_control(self):
        nc, nq = self.space.qweights.shape
        v = project_box(np.zeros(2), self.problem.lower, self.problem.upper)
        shape = (nc, 2) if self.problem.scheme is Scheme.FullyDiscrete else (nc, nq, 2)
        return np.broadcast_to(v, shape).copy()

    def random_feasible(self, rng):
        nc, nq = self.space.qweights.shape
        shape = (nc, 2) if self.problem.scheme is Scheme.FullyDiscrete else (nc, nq, 2)
        a, b = self.problem.lower, self.problem.upper
        return a + (b - a) * rng.random(shape)

    def project(self, values):
        return project_box(values, self.problem.lower, self.problem.upper)

    def is_feasible(self, values, slack=0.0):
        return bool(np.all(values >= self.problem.lower - slack)
                    and np.all(values <= self.problem.upper + slack))

    # -- evaluations -------------------------------------------------------
    def state(self, u):
        p = self.problem
        try:
            st = solve_state(self.space, p.nu, u, tol=self.newton_tol, initial=self._warm)
        except NonlinearSolveError:
            if self._warm is None:
                raise
            st = solve_state(self.space, p.nu, u, tol=self.newton_tol)
        self._warm = (st.y.coefficients, st.p.coefficients)
        return st

    def cost(self, u, state=None):
        state = self.state(u) if state is None else state
        return cost(self.problem, self.space, state.y, u), state

    def adjoint(self, state):
        return solve_adjoint(self.space, state, self.problem.tracking)

    def gradient_values(self, u, adjoint):
        """Riesz representative ``z + alpha u`` in the scheme's representation."""
        if self.problem.scheme is Scheme.FullyDiscrete:
            zbar = project_l2_piecewise_constant(self.space, adjoint.z)
        else:
            zbar, _ = self.space.velocity_at_quadrature(adjoint.z)
        return zbar + self.problem.alpha * self.as_values(u)

    def gradient(self, u, state=None):
        state = self.state(u) if state is None else state
        adj = self.adjoint(state)
        return self.gradient_values(u, adj), state, adj

    def stationarity(self, u, d):
        u = self.as_values(u)
        return l2_norm(self.space, u - self.project(u - d))

    def second_order(self, u, g, state=None):
        """``alpha ||g||^2 - 2 b(phi; phi, z) + sum_t |phi(t)|^2``."""
        state = self.state(u) if state is None else state
        adj = self.adjoint(state)
        phi, _ = solve_linearized(self.space, state.y, assemble_load(self.space, g),
                                  self.problem.nu, solver=state.linearized_solver())
        pts = self.problem.tracking.points
        point_term = float(np.sum(evaluate_fe(self.space, phi, pts) ** 2)) if len(pts) else 0.0
        return (self.problem.alpha * l2_norm(self.space, g) ** 2
                - 2.0 * trilinear(self.space, phi, phi, adj.z) + point_term)


def reduced_gradient(problem, mesh_or_reduced, u):
    """Return ``(d, state, adjoint)`` with ``d = z + alpha u`` in the scheme's representation."""
    rp = _reduced(problem, mesh_or_reduced)
    return rp.gradient(u)


def second_order_value(problem, mesh_or_reduced, u, g):
    return _reduced(problem, mesh_or_reduced).second_order(u, g)


def _reduced(problem, mesh_or_reduced):
    if isinstance(mesh_or_reduced, ReducedProblem):
        return mesh_or_reduced
    return ReducedProblem(problem, mesh_or_reduced)


def optimize(problem, mesh, tol=1e-10, max_iter=200, strategy=Strategy.ProjectedGradientArmijo,
             theta=1.0, initial=None, reduced=None):
    """Minimize the reduced functional over the box-constrained controls.

    Stops when ``||u - clamp(u - d)||_{L2} <= tol``. Raises :class:`OptError`
    when no acceptable step above 1e-12 exists or a state solve fails.
    """
    strategy = Strategy.parse(strategy)
    rp = reduced if reduced is not None else ReducedProblem(problem, mesh)
    alpha = problem.alpha
    u = rp.initial_control() if initial is None else rp.project(rp.as_values(initial))
    history = []
    try:
        j, st = rp.cost(u)
        d, st, adj = rp.gradient(u, st)
    except (NonlinearSolveError, SolverError) as exc:
        raise OptError(f"initial state solve failed: {exc}", diagnostics={}) from exc
    history.append(j)
    measure = rp.stationarity(u, d)
    it = 0
    while measure > tol and it < max_iter:
        it += 1
        if strategy is Strategy.ProjectedGradientArmijo:
            s = 1.0 / alpha
            while True:
                trial = rp.project(u - s * d)
                jt, stt = _trial_cost(rp, trial, history, measure)
                slope = l2_inner(rp.space, d, trial - u)
                if jt <= j + ARMIJO_SIGMA * slope or _unresolved(j, jt, slope):
                    break
                s *= 0.5
                if s < MIN_STEP:
                    raise OptError("Armijo line search stagnated",
                                   diagnostics={"cost_history": history, "measure": measure,
                                                "iterations": it})
        else:
            target = rp.project(-(d - alpha * u) / alpha)
            th = theta
            while True:
                trial = (1.0 - th) * u + th * target
                jt, stt = _trial_cost(rp, trial, history, measure)
                if jt <= j or _unresolved(j, jt, l2_inner(rp.space, d, trial - u)):
                    break
                th *= 0.5
                if th < MIN_STEP:
                    raise OptError("fixed-point damping stagnated",
                                   diagnostics={"cost_history": history, "measure": measure,
                                                "iterations": it})
        assert rp.is_feasible(trial)
        u, j, st = trial, jt, stt
        history.append(j)
        d, st, adj = rp.gradient(u, st)
        measure = rp.stationarity(u, d)
        log.debug("iteration %d: cost %.12g, stationarity %.3e", it, j, measure)

    result = OptimizationResult(control=u, state=st, adjoint=adj, cost_history=history,
                                vi_residual=measure, iterations=it, converged=measure <= tol,
                                values=u)
    if problem.scheme is Scheme.Semidiscrete:
        _close_semidiscrete(rp, result)
    return result


def _unresolved(j, jt, slope):
    """True when the predicted decrease is below the rounding level of ``j``.

    Near convergence cost differences are pure rounding; a descent step
    (``slope < 0``) is then accepted unless it raises the cost measurably.
    """
    noise = COST_NOISE * (1.0 + abs(j))
    return slope < 0.0 and -slope <= noise and jt <= j + noise


def _trial_cost(rp, trial, history, measure):
    try:
        return rp.cost(trial)
    except (NonlinearSolveError, SolverError) as exc:
        raise OptError(f"state solve failed during line search: {exc}",
                       diagnostics={"cost_history": history, "measure": measure}) from exc


def _close_semidiscrete(rp, result):
    """Replace the converged quadrature values by the closure of the final adjoint."""
    p = rp.problem
    closure = ClosureControl(result.adjoint.z, p.alpha, p.lower, p.upper)
    values = closure.at_quadrature(rp.space)
    st = rp.state(values)
    j, _ = rp.cost(values, st)
    d, st, adj = rp.gradient(values, st)
    result.control = closure
    result.values = values
    result.state = st
    result.adjoint = adj
    result.cost_history.append(j)
    result.vi_residual = rp.stationarity(values, d)


# -- stationarity certificates ---------------------------------------------

def cellwise_projection_residual(rp, values, adjoint):
    """Max over cells of ``|u_T - clamp(-alpha^-1 |T|^-1 int_T z)|``."""
    p = rp.problem
    zbar = project_l2_piecewise_constant(rp.space, adjoint.z)
    return float(np.max(np.abs(values - project_box(-zbar / p.alpha, p.lower, p.upper))))


def closure_residual(rp, control, z=None):
    """Max over quadrature points of ``|u - clamp(-z / alpha)|``.

    With ``z=None`` the closure's own stored adjoint is used.
    """
    p = rp.problem
    z = control.z if z is None else z
    Z, _ = rp.space.velocity_at_quadrature(z)
    U = control_at_quadrature(rp.space, control)
    return float(np.max(np.abs(U - project_box(-Z / p.alpha, p.lower, p.upper))))


def sampled_variational_inequality(rp, values, d, samples=100, seed=0):
    """Smallest ``(d, v - u)`` over random feasible ``v`` and its scale.

    The scale is ``||d|| * ||b - a|| * |Omega|^(1/2)``.
    """
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(samples):
        v = rp.random_feasible(rng)
        worst = min(worst, l2_inner(rp.space, d, v - values))
    p = rp.problem
    scale = l2_norm(rp.space, d) * np.linalg.norm(p.upper - p.lower) \
        * np.sqrt(rp.space.mesh.domain_area)
    return worst, max(scale, 1.0)


def finite_difference_gradient(rp, u, g, eps):
    jp, _ = rp.cost(u + eps * g)
    jm, _ = rp.cost(u - eps * g)
    return (jp - jm) / (2.0 * eps)


def second_difference(rp, u, g, eps):
    jp, _ = rp.cost(u + eps * g)
    j0, _ = rp.cost(u)
    jm, _ = rp.cost(u - eps * g)
    return (jp - 2.0 * j0 + jm) / eps ** 2


__all__ = [
    "ClosureControl", "ControlProblem", "OptimizationResult", "ReducedProblem", "Scheme",
    "Strategy", "cellwise_projection_residual", "closure_residual", "cost",
    "finite_difference_gradient", "l2_inner", "l2_norm", "optimize",
    "project_box", "project_l2_piecewise_constant", "reduced_gradient",
    "sampled_variational_inequality", "second_difference", "second_order_value",
]
