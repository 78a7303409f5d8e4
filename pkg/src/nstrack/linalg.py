"""Direct solution of the mixed velocity/pressure saddle-point systems.

The full indefinite system ``[A B^T; B 0]`` is factorized once with a sparse
LU. MKL PARDISO (through ``pypardiso``) is used when it can be loaded: its
nested-dissection ordering with weighted matching keeps fill low on the zero
pressure block. SciPy's SuperLU is the fallback and is fine on coarse meshes.
"""

import glob
import logging
import os
import site
import sys
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import PIN_FIRST_PRESSURE_DOF
from .errors import SolverError

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
MAX_REFINEMENT_STEPS = 3


def _load_pypardiso():
    if "PYPARDISO_MKL_RT" not in os.environ:
        prefixes = {sys.prefix, sys.exec_prefix, sys.base_prefix, "/usr/local", site.USER_BASE}
        for prefix in sorted(p for p in prefixes if p):
            hits = sorted(glob.glob(os.path.join(prefix, "lib*", "libmkl_rt.so*")), key=len)
            if hits:
                os.environ["PYPARDISO_MKL_RT"] = hits[0]
                break
    try:
        import pypardiso
        pypardiso.PyPardisoSolver()
    except (ImportError, OSError) as exc:
        log.debug("pypardiso unavailable (%s); using SuperLU", exc)
        return None
    return pypardiso


_pypardiso = _load_pypardiso()


def available_backends():
    return ["pardiso", "superlu"] if _pypardiso is not None else ["superlu"]


class _PardisoLU:
    def __init__(self, K):
        self.K = K.tocsr()
        self.K.sort_indices()
        self.solver = _pypardiso.PyPardisoSolver(mtype=11)
        self.solver.factorize(self.K)

    def solve(self, rhs, transpose=False):
        s = self.solver
        s.set_phase(33)
        # iparm 12 = 2 solves with the transpose of the stored factorization
        s.set_iparm(12, 2 if transpose else 0)
        return s._call_pardiso(self.K, np.ascontiguousarray(rhs, dtype=float))

    def __del__(self):
        try:
            self.solver.free_memory(everything=True)
        except Exception:
            pass


class _SuperLU:
    def __init__(self, K):
        self.lu = spla.splu(K.tocsc(), permc_spec="COLAMD")

    def solve(self, rhs, transpose=False):
        return self.lu.solve(rhs, trans="T" if transpose else "N")


@dataclass
class LinearSolution:
    velocity: np.ndarray
    pressure: np.ndarray
    residual_norm: float
    iterations: int = 0
    relative_residual: float = 0.0


class SaddleSolver:
    """Factorization of ``[A B^T; B 0]`` with the pressure gauge applied.

    After construction :meth:`solve` can be called for any number of
    right-hand sides; ``transpose=True`` solves ``[A^T B^T; B 0]``, which is
    the adjoint of the same operator. Instances are not thread-safe: the
    PARDISO handle carries shared state and transposes are cached lazily.

    Parameters
    ----------
    A, B : sparse matrices
        Velocity block (n x n) and divergence block (m x n), Dirichlet
        conditions already applied.
    gauge : str or None
        ``"PinFirstPressureDof"`` fixes pressure dof 0 during the solve.
        ``None`` leaves the constant-pressure kernel in place, which is
        reported as a :class:`SolverError`.
    pressure_weights : array, optional
        ``int phi_q`` for each pressure basis function. When given, returned
        pressures are shifted to zero mean.
    backend : {"auto", "pardiso", "superlu"}
    """

    def __init__(self, A, B, gauge=PIN_FIRST_PRESSURE_DOF, pressure_weights=None,
                 rtol=RESIDUAL_TOL, backend="auto"):
        self.n = A.shape[0]
        self.m = B.shape[0]
        self.rtol = rtol
        self.pressure_weights = pressure_weights
        A = sp.csr_matrix(A)
        B = sp.csr_matrix(B)
        if self.m:
            self.full = sp.bmat([[A, B.T], [B, None]], format="csr")
        else:
            self.full = A.copy()

        K = self.full
        if self.m:
            if gauge == PIN_FIRST_PRESSURE_DOF:
                K = _pin(K, self.n)
            elif gauge is None:
                kernel = B.T @ np.ones(self.m)
                if np.abs(kernel).max() <= 1e-12 * max(abs(B).max(), 1.0):
                    raise SolverError("singular system: constant pressures lie in the kernel "
                                      "(no pressure gauge applied)")
            else:
                raise SolverError(f"unknown gauge {gauge!r}")
        self.gauge = gauge
        self.pinned = K
        self._transposed = None
        # Frobenius norm bounds the spectral norm; used for backward errors
        self.norm = float(spla.norm(self.full))

        if backend == "auto":
            backend = "pardiso" if _pypardiso is not None and self.n + self.m > 2000 else "superlu"
        if backend == "pardiso" and _pypardiso is None:
            raise SolverError("PARDISO backend requested but pypardiso/MKL is not available")
        self.backend = backend
        try:
            self.lu = _PardisoLU(K) if backend == "pardiso" else _SuperLU(K)
        except (RuntimeError, ValueError) as exc:
            raise SolverError(f"sparse LU failed: {exc}") from exc

    def _operators(self, transpose):
        if not transpose:
            return self.full, self.pinned
        if self._transposed is None:
            self._transposed = (self.full.T.tocsr(), self.pinned.T.tocsr())
        return self._transposed

    def _mean_correct(self, x):
        if self.m and self.pressure_weights is not None:
            w = self.pressure_weights
            x[self.n:] -= (w @ x[self.n:]) / w.sum()

    def solve(self, f, g=None, transpose=False):
        f = np.asarray(f, dtype=float)
        g = np.zeros(self.m) if g is None else np.asarray(g, dtype=float)
        rhs = np.concatenate([f, g])
        prhs = rhs.copy()
        if self.m and self.gauge == PIN_FIRST_PRESSURE_DOF:
            prhs[self.n] = 0.0
        op, pinned = self._operators(transpose)
        scale = np.linalg.norm(rhs)

        x = self.lu.solve(prhs, transpose)
        steps = 0
        while steps < MAX_REFINEMENT_STEPS and scale > 0:
            r = prhs - pinned @ x
            # refine against the rhs: cheap, and keeps small Newton corrections accurate
            if np.linalg.norm(r) <= 0.01 * self.rtol * scale:
                break
            x = x + self.lu.solve(r, transpose)
            steps += 1
        self._mean_correct(x)

        res = float(np.linalg.norm(op @ x - rhs))
        rel = res / scale if scale > 0 else res
        # normwise backward error: tiny right-hand sides (late Newton steps) are
        # still accepted when the residual sits at round-off level
        backward = res / (self.norm * np.linalg.norm(x) + scale) if scale > 0 else res
        if not np.isfinite(backward) or backward > self.rtol:
            raise SolverError(f"residual target missed: backward error {backward:.3e}",
                              residual=res)
        return LinearSolution(x[:self.n].copy(), x[self.n:].copy(), res, steps, rel)


def _pin(K, n):
    """Replace row and column ``n`` by the identity."""
    d = np.ones(K.shape[0])
    d[n] = 0.0
    D = sp.diags(d)
    e = sp.coo_matrix(([1.0], ([n], [n])), shape=K.shape)
    out = (D @ K @ D + e).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def solve_saddle(system, pressure_weights=None, backend="auto"):
    """One-shot solve of a :class:`~nstrack.assembly.SaddleSystem`."""
    solver = SaddleSolver(system.A, system.B, system.gauge, pressure_weights, backend=backend)
    return solver.solve(system.f, system.g)
