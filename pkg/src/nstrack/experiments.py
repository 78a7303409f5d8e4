"""Convergence studies, derivative checks and inf-sup diagnostics.

Every runner returns a result object holding the data table and a list of
:class:`Check` entries; a run passes when every check passes.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .adjoint import assemble_adjoint_operator
from .assembly import assemble_mass_pressure, control_at_quadrature
from .elements import ElementPair, build_space, evaluate_basis
from .errors import DiagnosticError, NSTrackError
from .manufactured import manufactured_solution
from .mesh import barycentric, build_structured, locate_points
from .optimize import (ReducedProblem, Scheme, cellwise_projection_residual,
                       closure_residual, finite_difference_gradient, l2_inner, optimize,
                       sampled_variational_inequality, second_difference)
from .state import Discretization, solve_state

log = logging.getLogger(__name__)

ERROR_COLUMNS = (("e_u_L2", "eoc_u"), ("e_y_L2", "eoc_y"), ("e_y_Linf", "eoc_yinf"),
                 ("e_z_L2", "eoc_z"))
COLUMNS = ("h",) + tuple(c for pair in ERROR_COLUMNS for c in pair)

VERIFY_LEVELS = ((8, 8), (16, 16), (32, 32), (64, 64))
STUDY_LEVELS = ((8, 8), (16, 16), (32, 32))
INFSUP_LEVELS = ((4, 4), (8, 8), (16, 16))

CONTINUITY_TOL = 1e-9
GAUGE_TOL = 1e-12


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""


def eoc(errors, hs):
    """``log(e[k-1] / e[k]) / log(h[k-1] / h[k])``; NaN for the first row."""
    out = [float("nan")]
    for k in range(1, len(errors)):
        with np.errstate(divide="ignore", invalid="ignore"):
            out.append(float(np.log(errors[k - 1] / errors[k]) / np.log(hs[k - 1] / hs[k])))
    return out


class ConvergenceTable:
    """Errors per mesh level; EOC columns are derived from them.

    ``extra`` lists additional ``(error, eoc)`` column pairs appended after the
    standard ones.
    """

    def __init__(self, extra=()):
        self.extra = tuple(extra)
        self.h = []
        self.errors = {e: [] for e, _ in ERROR_COLUMNS + self.extra}

    @property
    def error_columns(self):
        return ERROR_COLUMNS + self.extra

    @property
    def columns(self):
        return ("h",) + tuple(c for pair in self.error_columns for c in pair)

    def add(self, h, **errors):
        unknown = set(errors) - set(self.errors)
        if unknown:
            raise KeyError(f"unknown error columns {sorted(unknown)}")
        self.h.append(float(h))
        for key in self.errors:
            self.errors[key].append(float(errors.get(key, float("nan"))))

    def __len__(self):
        return len(self.h)

    def eoc(self, key):
        return eoc(self.errors[key], self.h)

    def rows(self):
        cols = {"h": self.h}
        for e, r in self.error_columns:
            cols[e] = self.errors[e]
            cols[r] = self.eoc(e)
        return [[cols[c][k] for c in self.columns] for k in range(len(self))]

    @classmethod
    def from_rows(cls, columns, rows):
        extra = []
        names = list(columns[1 + 2 * len(ERROR_COLUMNS):])
        for k in range(0, len(names), 2):
            extra.append((names[k], names[k + 1]))
        table = cls(extra)
        idx = {c: i for i, c in enumerate(columns)}
        for row in rows:
            table.add(row[0], **{e: row[idx[e]] for e, _ in table.error_columns})
        return table


@dataclass
class StudyResult:
    table: object
    checks: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)


@dataclass
class InfSupReport:
    pair: ElementPair
    levels: list = field(default_factory=list)
    h: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    kernel_eigenvalue: list = field(default_factory=list)


# -- shared helpers ----------------------------------------------------------

def structured_mesh(config, level):
    return build_structured(level[0], level[1], config.rect)


def continuity_and_gauge(space, velocity, pressure):
    """``(||B v||_inf / (1 + ||v||_inf), |int p| / ||p||)`` for a solved pair."""
    disc = Discretization.get(space, 1.0)
    v = velocity.coefficients
    p = pressure.coefficients
    div = float(np.abs(disc.B @ v).max() / (1.0 + np.abs(v).max()))
    pnorm = float(np.sqrt(max(p @ (assemble_mass_pressure(space) @ p), 0.0)))
    mean = abs(float(disc.pweights @ p))
    return div, (mean / pnorm if pnorm > 0 else mean)


class SolveMonitor:
    """Worst continuity and gauge ratios over all recorded solves."""

    def __init__(self):
        self.div = 0.0
        self.gauge = 0.0
        self.count = 0

    def record(self, space, velocity, pressure):
        d, g = continuity_and_gauge(space, velocity, pressure)
        self.div = max(self.div, d)
        self.gauge = max(self.gauge, g)
        self.count += 1

    def checks(self, label):
        return [Check(f"{label}: discrete continuity over {self.count} solves",
                      self.div <= CONTINUITY_TOL, self.div, CONTINUITY_TOL),
                Check(f"{label}: pressure gauge over {self.count} solves",
                      self.gauge <= GAUGE_TOL, self.gauge, GAUGE_TOL)]


def values_on_fine(coarse, fine, velocity=None, cell_values=None):
    """Values (nfine, nq, 2) at the fine quadrature points of a coarse quantity.

    The meshes must be nested; each fine cell is assigned to the coarse cell
    containing its centroid.
    """
    cells, _ = locate_points(coarse.mesh, fine.mesh.centroids())
    nf, nq = fine.qweights.shape
    if cell_values is not None:
        return np.broadcast_to(np.asarray(cell_values)[cells][:, None, :], (nf, nq, 2))
    cid = np.repeat(cells, nq)
    bary = barycentric(coarse.mesh, cid, fine.qpoints.reshape(-1, 2))
    vals, _ = evaluate_basis(coarse.pair, "velocity_scalar", bary)
    dofs = coarse.cell_to_scalar_dofs[cid]
    c = velocity.coefficients
    ns = coarse.scalar_dof_count
    out = np.stack([np.einsum("nb,nb->n", vals, c[:ns][dofs]),
                    np.einsum("nb,nb->n", vals, c[ns:][dofs])], axis=1)
    return out.reshape(nf, nq, 2)


def _l2(space, values):
    return float(np.sqrt(space.integrate(np.sum(values ** 2, axis=-1))))


# -- manufactured state verification -------------------------------------------

def run_verify_state(config, pair=None):
    """State errors against the manufactured curl-of-psi solution."""
    pair = ElementPair.parse(pair or config.pair)
    config = config.with_default_levels(VERIFY_LEVELS)
    ms = manufactured_solution(config.nu)
    table = ConvergenceTable(extra=(("e_y_H1", "eoc_yh1"),))
    monitor = SolveMonitor()
    checks = []
    t0 = time.perf_counter()
    for level in config.levels:
        space = build_space(structured_mesh(config, level), pair)
        try:
            st = solve_state(space, config.nu, ms.load, tol=config.newton_tol)
        except NSTrackError as exc:
            checks.append(Check(f"state solve on {level[0]}x{level[1]}", False, float("nan"),
                                float("nan"), str(exc)))
            continue
        monitor.record(space, st.y, st.p)
        Y, G = space.velocity_at_quadrature(st.y)
        X = space.qpoints
        ex = np.stack(ms.velocity(X[..., 0], X[..., 1]), axis=-1)
        gx = np.array(ms.velocity_grad(X[..., 0], X[..., 1])).transpose(2, 3, 0, 1)
        table.add(space.mesh.h_max,
                  e_y_L2=_l2(space, Y - ex),
                  e_y_Linf=float(np.abs(Y - ex).max()),
                  e_y_H1=float(np.sqrt(space.integrate(np.sum((G - gx) ** 2, axis=(-1, -2))))))
    elapsed = time.perf_counter() - t0

    if len(table) >= 2:
        last = {k: table.eoc(k)[-1] for k in ("e_y_L2", "e_y_Linf", "e_y_H1")}
        if pair is ElementPair.TaylorHood:
            checks += [
                Check("velocity Linf EOC >= 1", last["e_y_Linf"] >= 1.0, last["e_y_Linf"], 1.0),
                Check("velocity H1 EOC in [1.8, 2.2]", 1.8 <= last["e_y_H1"] <= 2.2,
                      last["e_y_H1"], 2.0),
                Check("velocity L2 EOC in [2.7, 3.3]", 2.7 <= last["e_y_L2"] <= 3.3,
                      last["e_y_L2"], 3.0),
            ]
        else:
            checks.append(Check("velocity H1 EOC in [0.8, 1.2]", 0.8 <= last["e_y_H1"] <= 1.2,
                                last["e_y_H1"], 1.0))
    checks += monitor.checks("state")
    return StudyResult(table, checks, {"pair": pair.value, "seconds": elapsed})


# -- control convergence study -----------------------------------------------

def _solve_control(config, problem, level):
    mesh = structured_mesh(config, level)
    rp = ReducedProblem(problem, mesh)
    res = optimize(problem, mesh, tol=config.opt_tol, max_iter=config.opt_max_iter,
                   strategy=config.strategy, reduced=rp)
    return rp, res


def _control_on(rp, res, target):
    """Control of ``res`` at the quadrature points of ``target``."""
    if rp.problem.scheme is Scheme.FullyDiscrete:
        return values_on_fine(rp.space, target, cell_values=res.values)
    z = values_on_fine(rp.space, target, velocity=res.control.z)
    p = rp.problem
    return np.minimum(p.upper, np.maximum(-z / p.alpha, p.lower))


def run_control_study(config, scheme=None, pair=None):
    """Optimize on each level and on the reference level; tabulate errors.

    Errors are integrated with the reference mesh's quadrature.
    """
    problem = config.problem(scheme=scheme, pair=pair)
    config = config.with_default_levels(STUDY_LEVELS)
    monitor = SolveMonitor()
    checks = []
    t0 = time.perf_counter()

    ref_rp, ref = _solve_control(config, problem, config.reference_level)
    fine = ref_rp.space
    monitor.record(fine, ref.state.y, ref.state.p)
    monitor.record(fine, ref.adjoint.z, ref.adjoint.r)
    u_ref = control_at_quadrature(fine, ref.control if problem.scheme is Scheme.Semidiscrete
                                  else ref.values)
    y_ref, _ = fine.velocity_at_quadrature(ref.state.y)
    z_ref, _ = fine.velocity_at_quadrature(ref.adjoint.z)
    active = {
        "upper": bool(np.any(np.isclose(u_ref, problem.upper))),
        "lower": bool(np.any(np.isclose(u_ref, problem.lower))),
    }
    checks.append(Check("reference optimization converged", ref.converged, ref.vi_residual,
                        config.opt_tol))
    checks.append(Check("both bounds active at the reference control",
                        active["upper"] and active["lower"], float(sum(active.values())), 2.0))

    table = ConvergenceTable()
    for level in config.levels:
        try:
            rp, res = _solve_control(config, problem, level)
        except NSTrackError as exc:
            checks.append(Check(f"optimization on {level[0]}x{level[1]}", False, float("nan"),
                                config.opt_tol, str(exc)))
            continue
        monitor.record(rp.space, res.state.y, res.state.p)
        monitor.record(rp.space, res.adjoint.z, res.adjoint.r)
        checks.append(Check(f"optimization converged on {level[0]}x{level[1]}", res.converged,
                            res.vi_residual, config.opt_tol))
        y = values_on_fine(rp.space, fine, velocity=res.state.y)
        z = values_on_fine(rp.space, fine, velocity=res.adjoint.z)
        table.add(rp.space.mesh.h_max,
                  e_u_L2=_l2(fine, _control_on(rp, res, fine) - u_ref),
                  e_y_L2=_l2(fine, y - y_ref),
                  e_y_Linf=float(np.abs(y - y_ref).max()),
                  e_z_L2=_l2(fine, z - z_ref))

    for key, label in (("e_u_L2", "control"), ("e_z_L2", "adjoint")):
        rates = table.eoc(key)[1:]
        worst = min(rates) if rates else float("nan")
        checks.append(Check(f"{label} L2 EOC >= 0.9", bool(rates) and worst >= 0.9, worst, 0.9))
    checks += monitor.checks("state/adjoint")
    info = {"scheme": problem.scheme.value, "pair": problem.pair.value,
            "reference": list(config.reference_level), "seconds": time.perf_counter() - t0,
            "reference_cost": ref.cost_history[-1]}
    return StudyResult(table, checks, info)


# -- derivative checks ---------------------------------------------------------

GRADIENT_EPS = (1e-2, 1e-3, 1e-4)
HESSIAN_EPS = 1e-3


def transpose_defect(space, y, nu):
    """Relative max-norm gap between the adjoint matrix and the transposed Jacobian."""
    disc = Discretization.get(space, nu)
    lin = disc.jacobian(y.coefficients)
    adj = assemble_adjoint_operator(space, y, nu)
    gap = abs(adj - lin.T.tocsr()).max()
    return float(gap / abs(lin).max())


def bilinear_transpose_defect(space, y, nu, rng, samples=3):
    """Worst ``|w^T Adj v - v^T Lin w|`` relative to ``|w| |Lin| |v|``."""
    disc = Discretization.get(space, nu)
    lin = disc.jacobian(y.coefficients)
    adj = assemble_adjoint_operator(space, y, nu)
    scale = abs(lin).max()
    worst = 0.0
    for _ in range(samples):
        w = rng.standard_normal(lin.shape[0])
        v = rng.standard_normal(lin.shape[0])
        gap = abs(w @ (adj @ v) - v @ (lin @ w))
        worst = max(worst, gap / (np.abs(w).sum() * np.abs(v).sum() * scale))
    return float(worst)


def run_derivative_checks(config, schemes=None, pairs=None, n=16, directions=5,
                          hessian_directions=3):
    """Derivative checks and the adjoint transpose check on an ``n x n`` mesh."""
    schemes = [Scheme.parse(s) for s in (schemes or list(Scheme))]
    pairs = [ElementPair.parse(p) for p in (pairs or list(ElementPair))]
    rng = np.random.default_rng(config.seed)
    checks = []
    monitor = SolveMonitor()
    rows = []
    mesh = build_structured(n, n, config.rect)
    for pair in pairs:
        for scheme in schemes:
            label = f"{scheme.value}/{pair.value}"
            problem = config.problem(scheme=scheme, pair=pair)
            rp = ReducedProblem(problem, mesh)
            mid = 0.5 * (problem.lower + problem.upper)
            u = mid + 0.5 * (rp.random_feasible(rng) - mid)
            d, st, adj = rp.gradient(u)
            monitor.record(rp.space, st.y, st.p)
            monitor.record(rp.space, adj.z, adj.r)

            worst = 0.0
            for _ in range(directions):
                g = rp.random_feasible(rng)
                dd = l2_inner(rp.space, d, g)
                err = min(abs(finite_difference_gradient(rp, u, g, e) - dd)
                          for e in GRADIENT_EPS)
                worst = max(worst, err / (1.0 + abs(dd)))
            rows.append((label, "gradient", worst, 1e-6))
            checks.append(Check(f"{label}: central-difference gradient", worst <= 1e-6,
                                worst, 1e-6))

            worst = 0.0
            for _ in range(hessian_directions):
                g = rp.random_feasible(rng)
                exact = rp.second_order(u, g)
                approx = second_difference(rp, u, g, HESSIAN_EPS)
                worst = max(worst, abs(approx - exact) / (1.0 + abs(exact)))
            rows.append((label, "second_order", worst, 1e-4))
            checks.append(Check(f"{label}: second-order identity", worst <= 1e-4, worst, 1e-4))

        st = solve_state(rp.space, config.nu, rp.initial_control() + 0.5, tol=config.newton_tol)
        gap = max(transpose_defect(rp.space, st.y, config.nu),
                  bilinear_transpose_defect(rp.space, st.y, config.nu, rng))
        rows.append((pair.value, "transpose", gap, 1e-12))
        checks.append(Check(f"{pair.value}: adjoint matrix is the transposed linearization",
                            gap <= 1e-12, gap, 1e-12))
    checks += monitor.checks("state/adjoint")
    return StudyResult(rows, checks, {"mesh": [n, n]})


# -- stationarity certificates -------------------------------------------------

def stationarity_certificates(config, scheme=None, pair=None, level=None, samples=100):
    """Optimize on one level and evaluate the scheme's optimality certificates."""
    problem = config.problem(scheme=scheme, pair=pair)
    rp, res = _solve_control(config, problem, level or (config.levels or STUDY_LEVELS)[0])
    d = rp.gradient_values(res.values, res.adjoint)
    worst, scale = sampled_variational_inequality(rp, res.values, d, samples, config.seed)
    checks = [Check("optimization converged", res.converged, res.vi_residual, config.opt_tol),
              Check("sampled variational inequality", worst >= -1e-8 * scale, worst,
                    -1e-8 * scale)]
    if problem.scheme is Scheme.FullyDiscrete:
        gap = cellwise_projection_residual(rp, res.values, res.adjoint)
        checks.append(Check("cellwise projection identity", gap <= 1e-8, gap, 1e-8))
    else:
        gap = closure_residual(rp, res.control)
        checks.append(Check("closure identity at quadrature points", gap == 0.0, gap, 0.0))
        drift = closure_residual(rp, res.control, res.adjoint.z)
        checks.append(Check("closure matches the final adjoint", drift <= 1e-8, drift, 1e-8))
    return StudyResult([(c.name, c.value, c.threshold) for c in checks], checks,
                       {"result": res, "reduced": rp})


# -- inf-sup diagnostic ----------------------------------------------------------

def infsup_constant(space):
    """Return ``(beta, lambda0)``: the deflated inf-sup constant and the raw
    smallest eigenvalue of ``B K^-1 B^T q = lambda M_p q``."""
    disc = Discretization.get(space, 1.0)
    free = ~disc.mask
    K = disc.K[free][:, free].tocsc()
    B = disc.B[:, free].toarray()
    Mp = assemble_mass_pressure(space).toarray()
    try:
        S = B @ spla.splu(K).solve(B.T)
        S = 0.5 * (S + S.T)
        lam0 = float(sla.eigh(S, Mp, eigvals_only=True, subset_by_index=[0, 0])[0])
        # orthogonal complement of the constants in the M_p inner product
        c = Mp @ np.ones(len(Mp))
        Q = sla.null_space(c[None, :])
        lam = sla.eigh(Q.T @ S @ Q, Q.T @ Mp @ Q, eigvals_only=True, subset_by_index=[0, 0])
    except (np.linalg.LinAlgError, ValueError, RuntimeError) as exc:
        raise DiagnosticError(f"inf-sup eigenproblem failed: {exc}") from exc
    return float(np.sqrt(max(lam[0], 0.0))), lam0


def run_infsup_diagnostic(config, pairs=None):
    levels = config.levels or INFSUP_LEVELS
    pairs = [ElementPair.parse(p) for p in (pairs or list(ElementPair))]
    reports, checks = [], []
    for pair in pairs:
        rep = InfSupReport(pair)
        for level in levels:
            space = build_space(structured_mesh(config, level), pair)
            beta, lam0 = infsup_constant(space)
            rep.levels.append(tuple(level))
            rep.h.append(space.mesh.h_max)
            rep.beta.append(beta)
            rep.kernel_eigenvalue.append(lam0)
            checks.append(Check(f"{pair.value} {level[0]}x{level[1]}: beta_h > 0", beta > 1e-8,
                                beta, 1e-8))
        for k in range(1, len(rep.beta)):
            ratio = rep.beta[k] / rep.beta[k - 1]
            checks.append(Check(f"{pair.value}: beta decay {rep.levels[k - 1][0]}->"
                                f"{rep.levels[k][0]} below 10%", ratio > 0.9, ratio, 0.9))
        reports.append(rep)
    return StudyResult(reports, checks, {})
