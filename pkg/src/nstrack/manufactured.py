"""Manufactured stationary Navier-Stokes solution on the unit square.

The velocity is the curl of ``psi = x^2 (1-x)^2 y^2 (1-y)^2``, so it is
divergence-free and vanishes on the boundary; the pressure is ``x - 1/2``.
The load is obtained by symbolic differentiation.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy as sym


@dataclass(frozen=True)
class ManufacturedSolution:
    nu: float
    velocity: object          # f(x, y) -> (u1, u2)
    velocity_grad: object     # f(x, y) -> ((du1/dx, du1/dy), (du2/dx, du2/dy))
    pressure: object
    load: object


@lru_cache(maxsize=None)
def manufactured_solution(nu=1.0):
    x, y = sym.symbols("x y")
    psi = x**2 * (1 - x)**2 * y**2 * (1 - y)**2
    vel = sym.Matrix([sym.diff(psi, y), -sym.diff(psi, x)])
    p = x - sym.Rational(1, 2)
    grad = vel.jacobian([x, y])
    lap = sym.Matrix([sym.diff(c, x, 2) + sym.diff(c, y, 2) for c in vel])
    load = -nu * lap + grad * vel + sym.Matrix([sym.diff(p, x), sym.diff(p, y)])

    def vec(expr):
        fns = [sym.lambdify((x, y), sym.expand(e), "numpy") for e in expr]

        def f(X, Y):
            X = np.asarray(X, dtype=float)
            return tuple(np.broadcast_to(fn(X, Y), X.shape).astype(float) for fn in fns)
        return f

    gfns = vec(list(grad))

    def velocity_grad(X, Y):
        g = gfns(X, Y)
        return ((g[0], g[1]), (g[2], g[3]))

    pfn = sym.lambdify((x, y), p, "numpy")
    return ManufacturedSolution(
        nu=float(nu),
        velocity=vec(vel),
        velocity_grad=velocity_grad,
        pressure=lambda X, Y: np.broadcast_to(pfn(X, Y), np.shape(X)).astype(float),
        load=vec(load),
    )
