"""Reference elements, quadrature and mixed spaces for Taylor-Hood and MINI.

Velocity dofs are numbered per scalar component: mesh vertices first, then
edge midpoints (Taylor-Hood) or cell bubbles (MINI). The x components occupy
``[0, n)`` and the y components ``[n, 2n)``. Pressure is continuous P1 with
one dof per vertex.
"""

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InputError
from .mesh import LOCAL_EDGES, locate_points


class ElementPair(enum.Enum):
    TaylorHood = "th"
    Mini = "mini"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {"th": cls.TaylorHood, "taylorhood": cls.TaylorHood,
                   "mini": cls.Mini, "p1b": cls.Mini, "p1bubble": cls.Mini}
        if key not in aliases:
            raise InputError(f"unknown element pair {value!r}")
        return aliases[key]


# Fully symmetric rules on the reference triangle. Orbits: ("c", w) centroid,
# ("s3", a, w) permutations of (a, a, 1-2a), ("s6", a, b, w) permutations of
# (a, b, 1-a-b). Weights are normalized to sum to 1.
_RULES = {
    1: [("c", 1.0)],
    2: [("s3", 1.0 / 6.0, 1.0 / 3.0)],
    4: [("s3", 0.44594849091596467, 0.22338158967801094),
        ("s3", 0.0915762135097711, 0.10995174365532243)],
    5: [("c", 0.22499999999999895),
        ("s3", 0.47014206410511494, 0.13239415278850658),
        ("s3", 0.10128650732345633, 0.1259391805448271)],
    6: [("s3", 0.24928674517089094, 0.11678627572641076),
        ("s3", 0.06308901449150593, 0.0508449063702123),
        ("s6", 0.053145049844804164, 0.3103524510337991, 0.08285107561835511)],
    8: [("c", 0.14431560767778476),
        ("s3", 0.4592925882927248, 0.09509163426728338),
        ("s3", 0.17056930775176105, 0.10321737053472953),
        ("s3", 0.05054722831703256, 0.03245849762319974),
        ("s6", 0.008394777409946395, 0.2631128296346448, 0.027230314174429546)],
}
# degree 3 and 7 requests use the next rule with positive weights
_RULE_FOR_DEGREE = {1: 1, 2: 2, 3: 4, 4: 4, 5: 5, 6: 6, 7: 8, 8: 8}

DEFAULT_QUAD_DEGREE = 6


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    degree: int
    points: np.ndarray   # (nq, 3) barycentric
    weights: np.ndarray  # (nq,), sum to 1/2


def quadrature(degree):
    if degree not in _RULE_FOR_DEGREE:
        raise InputError(f"quadrature degree must be in 1..8, got {degree}")
    pts, wts = [], []
    for orbit in _RULES[_RULE_FOR_DEGREE[degree]]:
        kind = orbit[0]
        if kind == "c":
            pts.append((1 / 3, 1 / 3, 1 / 3))
            wts.append(orbit[1])
        elif kind == "s3":
            a, w = orbit[1:]
            c = 1.0 - 2.0 * a
            pts += [(a, a, c), (a, c, a), (c, a, a)]
            wts += [w] * 3
        else:
            a, b, w = orbit[1:]
            c = 1.0 - a - b
            pts += [(a, b, c), (b, a, c), (a, c, b), (c, a, b), (b, c, a), (c, b, a)]
            wts += [w] * 6
    return QuadratureRule(degree, np.array(pts), 0.5 * np.array(wts))


# d(lambda_0, lambda_1, lambda_2) / d(xi, eta)
_DLAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def evaluate_basis(pair, field, bary):
    """Local basis values and reference gradients.

    ``field`` is ``"velocity_scalar"`` or ``"pressure"``. ``bary`` may be a
    single triple or an array (..., 3). Returns ``values`` (..., nb) and
    ``gradients`` (..., nb, 2) with respect to the reference coordinates.
    """
    pair = ElementPair.parse(pair)
    lam = np.asarray(bary, dtype=float)
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    if field == "pressure" or (field == "velocity_scalar" and pair is ElementPair.Mini):
        vals = [l0, l1, l2]
        dl = [np.broadcast_to(np.eye(3)[i], lam.shape) for i in range(3)]
        if field == "velocity_scalar":
            vals.append(27.0 * l0 * l1 * l2)
            dl.append(27.0 * np.stack([l1 * l2, l0 * l2, l0 * l1], axis=-1))
    elif field == "velocity_scalar":
        vals = [lam[..., i] * (2.0 * lam[..., i] - 1.0) for i in range(3)]
        dl = []
        for i in range(3):
            g = np.zeros(lam.shape)
            g[..., i] = 4.0 * lam[..., i] - 1.0
            dl.append(g)
        for a, b in LOCAL_EDGES:
            vals.append(4.0 * lam[..., a] * lam[..., b])
            g = np.zeros(lam.shape)
            g[..., a] = 4.0 * lam[..., b]
            g[..., b] = 4.0 * lam[..., a]
            dl.append(g)
    else:
        raise InputError(f"unknown field {field!r}")
    values = np.stack(vals, axis=-1)
    grads = np.stack(dl, axis=-2) @ _DLAMBDA
    return values, grads


class FeFunction:
    """Coefficient vector tagged with its space and field role."""

    def __init__(self, space, field, coefficients):
        coefficients = np.asarray(coefficients, dtype=float)
        expected = space.dof_count(field)
        if coefficients.shape != (expected,):
            raise InputError(f"{field} coefficients must have shape ({expected},), "
                             f"got {coefficients.shape}")
        self.space = space
        self.field = field
        self.coefficients = coefficients

    def __repr__(self):
        return f"FeFunction({self.field}, n={len(self.coefficients)})"


class MixedSpace:
    """Velocity/pressure dof maps plus cached quadrature data for one mesh."""

    def __init__(self, mesh, pair, quad_degree=DEFAULT_QUAD_DEGREE):
        self.mesh = mesh
        self.pair = ElementPair.parse(pair)
        self.quad_degree = quad_degree
        nv, nc = mesh.num_vertices, mesh.num_cells
        if self.pair is ElementPair.TaylorHood:
            self.scalar_dof_count = nv + mesh.num_edges
            self.cell_to_scalar_dofs = np.hstack([mesh.cells, nv + mesh.cell_edges])
            scalar_boundary = np.concatenate([mesh.boundary_vertices, mesh.boundary_edges])
            mid = mesh.vertices[mesh.edges].mean(axis=1)
            self.scalar_nodes = np.vstack([mesh.vertices, mid])
        else:
            self.scalar_dof_count = nv + nc
            self.cell_to_scalar_dofs = np.hstack([mesh.cells, nv + np.arange(nc)[:, None]])
            scalar_boundary = np.concatenate([mesh.boundary_vertices, np.zeros(nc, bool)])
            self.scalar_nodes = np.vstack([mesh.vertices, mesh.centroids()])
        ns = self.scalar_dof_count
        self.velocity_dof_count = 2 * ns
        self.pressure_dof_count = nv
        self.cell_to_velocity_dofs = np.hstack([self.cell_to_scalar_dofs,
                                                ns + self.cell_to_scalar_dofs])
        self.cell_to_pressure_dofs = mesh.cells.copy()
        self.scalar_boundary_mask = scalar_boundary
        self.dirichlet_mask = np.concatenate([scalar_boundary, scalar_boundary])

    def dof_count(self, field):
        if field == "velocity":
            return self.velocity_dof_count
        if field == "pressure":
            return self.pressure_dof_count
        if field == "control_pw_constant":
            return 2 * self.mesh.num_cells
        raise InputError(f"unknown field {field!r}")

    @property
    def local_scalar_count(self):
        return self.cell_to_scalar_dofs.shape[1]

    # -- cached quadrature data -------------------------------------------
    @cached_property
    def rule(self):
        return quadrature(self.quad_degree)

    @cached_property
    def jacobians(self):
        return self.mesh.jacobians()

    @cached_property
    def det(self):
        J = self.jacobians
        return J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]

    @cached_property
    def inv_jt(self):
        return np.linalg.inv(self.jacobians).transpose(0, 2, 1)

    @cached_property
    def qweights(self):
        """Physical quadrature weights, shape (ncell, nq)."""
        return np.abs(self.det)[:, None] * self.rule.weights[None, :]

    @cached_property
    def qpoints(self):
        """Physical quadrature points, shape (ncell, nq, 2)."""
        v = self.mesh.vertices[self.mesh.cells]
        return np.einsum("qk,ckd->cqd", self.rule.points, v)

    @cached_property
    def vbasis(self):
        vals, _ = evaluate_basis(self.pair, "velocity_scalar", self.rule.points)
        return vals

    @cached_property
    def vgrad(self):
        """Physical scalar-basis gradients, shape (ncell, nq, nb, 2)."""
        _, ref = evaluate_basis(self.pair, "velocity_scalar", self.rule.points)
        return np.einsum("cij,qbj->cqbi", self.inv_jt, ref)

    @cached_property
    def pbasis(self):
        vals, _ = evaluate_basis(self.pair, "pressure", self.rule.points)
        return vals

    # -- evaluation helpers ------------------------------------------------
    def velocity_at_quadrature(self, fn):
        """Values (ncell, nq, 2) and gradients (ncell, nq, 2, 2) of a velocity.

        ``grad[c, q, i, j]`` is the derivative of component ``i`` along ``j``.
        """
        coef = _coefficients(fn)
        ns = self.scalar_dof_count
        loc = np.stack([coef[:ns][self.cell_to_scalar_dofs],
                        coef[ns:][self.cell_to_scalar_dofs]], axis=-1)
        vals = np.einsum("qb,cbi->cqi", self.vbasis, loc)
        grads = np.einsum("cqbj,cbi->cqij", self.vgrad, loc)
        return vals, grads

    def pressure_at_quadrature(self, fn):
        coef = _coefficients(fn)
        return np.einsum("qb,cb->cq", self.pbasis, coef[self.cell_to_pressure_dofs])

    def integrate(self, values):
        """Integral of quadrature-point values (ncell, nq, ...)."""
        return np.tensordot(self.qweights, values, axes=([0, 1], [0, 1]))


def _coefficients(fn):
    return fn.coefficients if isinstance(fn, FeFunction) else np.asarray(fn, dtype=float)


def build_space(m, pair, quad_degree=DEFAULT_QUAD_DEGREE):
    return MixedSpace(m, pair, quad_degree)


def _eval_field(f, pts, ncomp):
    out = f(pts[:, 0], pts[:, 1])
    n = len(pts)
    if ncomp == 1:
        return np.broadcast_to(np.asarray(out, dtype=float), (n,))
    return np.stack([np.broadcast_to(np.asarray(c, dtype=float), (n,)) for c in out])


def interpolate(space, field, f):
    """Nodal interpolation of ``f(x, y)``.

    For velocities ``f`` returns a pair of arrays (or anything broadcastable to
    shape (2, n)); for pressure a single array. The MINI bubble coefficient is
    chosen so that the interpolant matches ``f`` at each barycenter.
    """
    m = space.mesh
    if field == "pressure":
        return FeFunction(space, "pressure", np.array(_eval_field(f, m.vertices, 1)))
    if field != "velocity":
        raise InputError(f"cannot interpolate field {field!r}")
    vals = np.array(_eval_field(f, space.scalar_nodes, 2))
    if space.pair is ElementPair.Mini:
        nv = m.num_vertices
        vals[:, nv:] -= vals[:, :nv][:, m.cells].mean(axis=2)
    return FeFunction(space, "velocity", vals.ravel())


def evaluate_fe(space, fn, points):
    """Point values of an FE function; a single point gives a single value."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    cells, bary = locate_points(space.mesh, pts)
    coef = _coefficients(fn)
    field = fn.field if isinstance(fn, FeFunction) else "velocity"
    if field == "pressure":
        vals, _ = evaluate_basis(space.pair, "pressure", bary)
        out = np.einsum("nb,nb->n", vals, coef[space.cell_to_pressure_dofs[cells]])
    else:
        vals, _ = evaluate_basis(space.pair, "velocity_scalar", bary)
        dofs = space.cell_to_scalar_dofs[cells]
        ns = space.scalar_dof_count
        out = np.stack([np.einsum("nb,nb->n", vals, coef[:ns][dofs]),
                        np.einsum("nb,nb->n", vals, coef[ns:][dofs])], axis=1)
    return out[0] if single else out


def point_basis(space, point):
    """Scalar dofs and basis values of the tie-broken cell containing ``point``."""
    cells, bary = locate_points(space.mesh, np.asarray(point, dtype=float)[None, :])
    vals, _ = evaluate_basis(space.pair, "velocity_scalar", bary[0])
    return space.cell_to_scalar_dofs[cells[0]], vals
