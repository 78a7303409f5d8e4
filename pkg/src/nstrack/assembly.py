"""Assembly of the discrete Navier-Stokes, linearized and adjoint operators.

All forms are integrated with the space's quadrature rule (degree 6 by
default). Matrices are returned as canonical ``scipy.sparse.csr_matrix``.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.io
import scipy.sparse as sp

from .elements import FeFunction, point_basis
from .errors import InputError
from .mesh import is_interior

PIN_FIRST_PRESSURE_DOF = "PinFirstPressureDof"


def _sparse(rows, cols, vals, shape):
    """Sum local contributions (ncell, nr, nc) into a canonical CSR matrix."""
    nr, nc = rows.shape[1], cols.shape[1]
    R = np.broadcast_to(rows[:, :, None], (len(rows), nr, nc))
    C = np.broadcast_to(cols[:, None, :], (len(cols), nr, nc))
    A = sp.coo_matrix((vals.ravel(), (R.ravel(), C.ravel())), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _block_diag2(space, local):
    """Two-component block-diagonal matrix from one scalar local matrix."""
    dofs = space.cell_to_scalar_dofs
    ns = space.scalar_dof_count
    K = _sparse(dofs, dofs, local, (ns, ns))
    return sp.block_diag([K, K], format="csr")


def assemble_viscous(space, nu):
    if nu <= 0:
        raise InputError("viscosity must be positive")
    G = space.vgrad
    local = np.einsum("cq,cqai,cqbi->cab", space.qweights, G, G)
    return nu * _block_diag2(space, local)


def assemble_mass_velocity(space):
    phi = space.vbasis
    local = np.einsum("cq,qa,qb->cab", space.qweights, phi, phi)
    return _block_diag2(space, local)


def assemble_mass_pressure(space):
    psi = space.pbasis
    local = np.einsum("cq,qa,qb->cab", space.qweights, psi, psi)
    dofs = space.cell_to_pressure_dofs
    return _sparse(dofs, dofs, local, (space.pressure_dof_count,) * 2)


def assemble_divergence(space):
    """``B[q, v] = (basis_q, div basis_v)``; rows are pressure dofs."""
    psi = space.pbasis
    G = space.vgrad
    # local[c, comp, q, a] = int psi_q d_comp phi_a
    local = np.einsum("cq,qp,cqai->cipa", space.qweights, psi, G)
    ns = space.scalar_dof_count
    rows = space.cell_to_pressure_dofs
    blocks = [_sparse(rows, space.cell_to_scalar_dofs, local[:, i],
                      (space.pressure_dof_count, ns)) for i in range(2)]
    return sp.hstack(blocks, format="csr")


def assemble_convection(space, y):
    """Convection linearizations about the velocity ``y``.

    ``C1[i, j] = b(y; phi_j, phi_i)`` and ``C2[i, j] = b(phi_j; y, phi_i)``
    with ``b(v1; v2, v3) = ((v1 . grad) v2, v3)``.
    """
    Y, GY = space.velocity_at_quadrature(y)
    w = space.qweights
    phi, G = space.vbasis, space.vgrad
    n1 = np.einsum("cq,cqi,cqai,qb->cba", w, Y, G, phi)
    C1 = _block_diag2(space, n1)

    ns = space.scalar_dof_count
    dofs = space.cell_to_scalar_dofs
    # n2[c, d, e, b, a] = int phi_a phi_b d_e y_d
    n2 = np.einsum("cq,cqde,qb,qa->cdeba", w, GY, phi, phi)
    blocks = [[_sparse(dofs, dofs, n2[:, d, e], (ns, ns)) for e in range(2)] for d in range(2)]
    C2 = sp.bmat(blocks, format="csr")
    C2.sort_indices()
    return C1, C2


def trilinear(space, v1, v2, v3):
    """``b(v1; v2, v3)`` by quadrature."""
    V1, _ = space.velocity_at_quadrature(v1)
    _, G2 = space.velocity_at_quadrature(v2)
    V3, _ = space.velocity_at_quadrature(v3)
    return float(space.integrate(np.einsum("cqj,cqij,cqi->cq", V1, G2, V3)))


def control_at_quadrature(space, u):
    """Values (ncell, nq, 2) of a control handle at the quadrature points.

    Accepted handles: ``None`` (zero), a constant pair, per-cell values of
    shape (ncell, 2), quadrature values (ncell, nq, 2), a velocity
    :class:`FeFunction`, any object with ``at_quadrature(space)``, or a
    callable ``f(x, y)`` returning two components.
    """
    nc, nq = space.qweights.shape
    if u is None:
        return np.zeros((nc, nq, 2))
    if hasattr(u, "at_quadrature"):
        return u.at_quadrature(space)
    if isinstance(u, FeFunction):
        if u.field != "velocity":
            raise InputError(f"cannot use a {u.field} function as a control")
        return space.velocity_at_quadrature(u)[0]
    if callable(u):
        X = space.qpoints
        comps = u(X[..., 0], X[..., 1])
        return np.stack([np.broadcast_to(np.asarray(c, dtype=float), (nc, nq))
                         for c in comps], axis=-1)
    arr = np.asarray(u, dtype=float)
    if arr.shape == (2,):
        return np.broadcast_to(arr, (nc, nq, 2))
    if arr.shape == (nc, 2):
        return np.broadcast_to(arr[:, None, :], (nc, nq, 2))
    if arr.shape == (nc, nq, 2):
        return arr
    raise InputError(f"unsupported control array shape {arr.shape}")


def assemble_load(space, u):
    """``f[i] = (u, phi_i)`` by quadrature."""
    U = control_at_quadrature(space, u)
    ns = space.scalar_dof_count
    loc = np.einsum("cq,cqk,qb->ckb", space.qweights, U, space.vbasis)
    dofs = space.cell_to_scalar_dofs.ravel()
    out = np.empty(2 * ns)
    out[:ns] = np.bincount(dofs, weights=loc[:, 0].ravel(), minlength=ns)
    out[ns:] = np.bincount(dofs, weights=loc[:, 1].ravel(), minlength=ns)
    return out


def assemble_dirac_rhs(space, points, coefficients):
    """Right-hand side of ``sum_t <c_t delta_t, w>`` for interior points ``t``."""
    ns = space.scalar_dof_count
    rhs = np.zeros(2 * ns)
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    coefficients = np.asarray(coefficients, dtype=float).reshape(-1, 2)
    if len(points) != len(coefficients):
        raise InputError("points and coefficients differ in length")
    for p, c in zip(points, coefficients):
        if not is_interior(space.mesh, p):
            raise InputError(f"Dirac point {tuple(p)} is not interior to the domain")
        dofs, vals = point_basis(space, p)
        np.add.at(rhs, dofs, vals * c[0])
        np.add.at(rhs, ns + dofs, vals * c[1])
    return rhs


@dataclass(frozen=True, eq=False)
class SaddleSystem:
    """Block system ``[A B^T; B 0] (x, p) = (f, g)``."""

    A: sp.csr_matrix
    B: sp.csr_matrix
    f: np.ndarray
    g: np.ndarray
    gauge: str = PIN_FIRST_PRESSURE_DOF

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[1] != n or len(self.f) != n \
                or len(self.g) != self.B.shape[0]:
            raise InputError("inconsistent saddle-point block shapes")


def dirichlet_scalings(mask):
    keep = sp.diags((~mask).astype(float), format="csr")
    fixed = sp.diags(mask.astype(float), format="csr")
    return keep, fixed


def eliminate(A, mask):
    """Zero masked rows and columns of ``A`` and put ones on their diagonal."""
    keep, fixed = dirichlet_scalings(mask)
    out = (keep @ A @ keep + fixed).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def apply_dirichlet(system, space):
    mask = space.dirichlet_mask
    keep, _ = dirichlet_scalings(mask)
    B = (system.B @ keep).tocsr()
    B.eliminate_zeros()
    f = np.where(mask, 0.0, system.f)
    return replace(system, A=eliminate(system.A, mask), B=B, f=f)


def export_matrix_market(path, matrix, comment=""):
    scipy.io.mmwrite(path, sp.coo_matrix(matrix), comment=comment, precision=17)


def pressure_integrals(space):
    """``int phi_q`` for every pressure basis function."""
    loc = space.qweights @ space.pbasis
    return np.bincount(space.cell_to_pressure_dofs.ravel(), weights=loc.ravel(),
                       minlength=space.pressure_dof_count)
