"""Discrete adjoint equations driven by Dirac measures at the tracking points.

The adjoint ``(z, r)`` satisfies, for all discrete ``(w, q)``,

    nu (grad w, grad z) + b(y; w, z) + b(w; y, z) - (r, div w)
        = sum_t (y(t) - y_t) . w(t),
    (q, div z) = 0.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import _block_diag2, _sparse, assemble_dirac_rhs
from .elements import FeFunction, evaluate_fe
from .errors import InputError
from .mesh import is_interior


@dataclass(frozen=True, eq=False)
class TrackingData:
    """Tracking points and target velocities.

    Parameters
    ----------
    points : array (npts, 2)
        Interior points of the domain, pairwise distinct.
    targets : array (npts, 2)
    """

    points: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        tgt = np.asarray(self.targets, dtype=float).reshape(-1, 2)
        if len(pts) != len(tgt):
            raise InputError("tracking points and targets differ in length")
        if len(pts) != len(np.unique(pts, axis=0)):
            raise InputError("tracking points must be pairwise distinct")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "targets", tgt)

    def __len__(self):
        return len(self.points)

    def check_interior(self, mesh):
        for p in self.points:
            if not is_interior(mesh, p):
                raise InputError(f"tracking point {tuple(p)} is not interior to the domain")


@dataclass(frozen=True, eq=False)
class AdjointSolution:
    z: FeFunction
    r: FeFunction


def mismatch(space, y, data):
    """``y(t) - y_t`` for every tracking point."""
    if len(data) == 0:
        return np.zeros((0, 2))
    data.check_interior(space.mesh)
    return evaluate_fe(space, y, data.points) - data.targets


def solve_adjoint(space, state, data):
    """Adjoint solve reusing the factorized linearized operator of ``state``."""
    rhs = assemble_dirac_rhs(space, data.points, mismatch(space, state.y, data)) \
        if len(data) else np.zeros(space.velocity_dof_count)
    rhs[space.dirichlet_mask] = 0.0
    sol = state.linearized_solver().solve(rhs, transpose=True)
    return AdjointSolution(FeFunction(space, "velocity", sol.velocity),
                           FeFunction(space, "pressure", sol.pressure))


def assemble_adjoint_operator(space, y, nu):
    """Matrix of ``nu (grad phi_i, grad w) + b(y; phi_i, w) + b(phi_i; y, w)``.

    Row ``i`` is the test function ``phi_i`` in the first slot, column ``j`` the
    adjoint trial function ``w = phi_j``. This is assembled directly from the
    adjoint form, not by transposing the linearized-state matrix.
    """
    Y, GY = space.velocity_at_quadrature(y)
    w = space.qweights
    phi, G = space.vbasis, space.vgrad
    local = nu * np.einsum("cq,cqbi,cqai->cba", w, G, G)
    local += np.einsum("cq,cqk,cqbk,qa->cba", w, Y, G, phi)
    D = _block_diag2(space, local)

    ns = space.scalar_dof_count
    dofs = space.cell_to_scalar_dofs
    # row (comp d, dof b), col (comp e, dof a): int phi_b d_d y_e phi_a
    n2 = np.einsum("cq,cqed,qb,qa->cdeba", w, GY, phi, phi)
    blocks = [[_sparse(dofs, dofs, n2[:, d, e], (ns, ns)) for e in range(2)] for d in range(2)]
    out = (D + sp.bmat(blocks, format="csr")).tocsr()
    out.sort_indices()
    return out
