"""Manufactured solution for the coupled system in one dimension.

The exact fields are

    f   = A(t, x) exp(-(v - b(t))^2 / 2) / sqrt(2 pi),
    A   = a0 (1 + 0.4 cos(pi x + t)),   b = 0.3 sin(t),
    rho = 1 + 0.2 cos(pi x) exp(-t),
    u   = 0.3 sin(pi x) cos(t),

on [0, 1] with walls (u = 0 at both ends), a constant kernel ``k0`` and the
inflow trace equal to the exact ``f``. ``rho_x`` vanishes at the walls, so the
zero-gradient pressure closure of the fluid solver is consistent with the
exact solution. The sources are derived with sympy and turned into numpy
callables with the signatures the solvers expect.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy as sp

from csns.coupling import CoupledState, Problem
from csns.fluid import FluidField, PhysParams, RegParams
from csns.grid import build_grids, make_boundary
from csns.kernel import constant_kernel

t, x, v = sp.symbols("t x v", real=True)


@dataclass(frozen=True)
class MMSCase:
    a0: float = 0.5
    k0: float = 0.5
    gamma: float = 5.0 / 3.0
    mu1: float = 0.02
    mu2: float = 0.0
    vmax: float = 8.0


@lru_cache(maxsize=4)
def _symbolic(case: MMSCase):
    A = case.a0 * (1 + sp.Rational(2, 5) * sp.cos(sp.pi * x + t))
    b = sp.Rational(3, 10) * sp.sin(t)
    f = A * sp.exp(-((v - b) ** 2) / 2) / sp.sqrt(2 * sp.pi)
    rho = 1 + sp.Rational(1, 5) * sp.cos(sp.pi * x) * sp.exp(-t)
    u = sp.Rational(3, 10) * sp.sin(sp.pi * x) * sp.cos(t)
    n, j = A, A * b  # velocity moments over the whole line
    mass = sp.integrate(A, (x, 0, 1))
    q = case.k0 * mass
    E = case.k0 * sp.integrate(j, (x, 0, 1))
    S_f = sp.diff(f, t) + v * sp.diff(f, x) + sp.diff((u + E - (1 + q) * v) * f, v) - sp.diff(f, v, 2)
    S_rho = sp.diff(rho, t) + sp.diff(rho * u, x)
    p = rho**case.gamma
    S_m = sp.diff(rho * u, t) + sp.diff(rho * u**2 + p, x) - (2 * case.mu1 + case.mu2) * sp.diff(u, x, 2) - (j - n * u)
    mods = ["numpy"]
    return {
        "f": sp.lambdify((t, x, v), f, mods),
        "rho": sp.lambdify((t, x), rho, mods),
        "u": sp.lambdify((t, x), u, mods),
        "S_f": sp.lambdify((t, x, v), sp.simplify(S_f), mods),
        "S_rho": sp.lambdify((t, x), S_rho, mods),
        "S_m": sp.lambdify((t, x), S_m, mods),
    }


class Manufactured:
    """Exact fields and sources of one :class:`MMSCase` on a given grid resolution."""

    def __init__(self, cells: int, v_cells: int, case: MMSCase = MMSCase()):
        self.case = case
        self.sym = _symbolic(case)
        self.grid, self.vgrid = build_grids([[0.0, 1.0]], [cells], case.vmax, v_cells)
        self.xc = self.grid.centers[0]
        self.vc = self.vgrid.centers[0]

    # exact fields on the cell centres
    def f(self, tt: float) -> np.ndarray:
        return np.broadcast_to(self.sym["f"](tt, self.xc[:, None], self.vc[None, :]), self.grid.shape + self.vgrid.shape).copy()

    def fluid(self, tt: float) -> FluidField:
        rho = np.broadcast_to(self.sym["rho"](tt, self.xc), self.grid.shape).astype(float)
        u = np.broadcast_to(self.sym["u"](tt, self.xc), self.grid.shape).astype(float)
        return FluidField(rho, (rho * u)[..., None])

    # sources in the solver signatures
    def kinetic_source(self, tt, X, V):
        return self.sym["S_f"](tt, X[..., 0], V[..., 0])

    def fluid_source(self, tt):
        s_rho = np.broadcast_to(self.sym["S_rho"](tt, self.xc), self.grid.shape).astype(float)
        s_m = np.broadcast_to(self.sym["S_m"](tt, self.xc), self.grid.shape).astype(float)[..., None]
        return s_rho, s_m

    def weak_sources(self) -> dict:
        return {
            "kinetic": self.kinetic_source,
            "rho": lambda tt: self.fluid_source(tt)[0],
            "momentum": lambda tt: self.fluid_source(tt)[1],
        }

    def trace(self, tt, X, V, side):
        return self.sym["f"](tt, X[..., 0], V[..., 0])

    def problem(self, fluid_mode: str = "coupled", **kw) -> Problem:
        boundary = make_boundary(self.grid, [0.0], 1.0, g=self.trace, g_sup=1.4 * self.case.a0 / np.sqrt(2 * np.pi))
        c = self.case
        return Problem(
            self.grid,
            self.vgrid,
            boundary,
            constant_kernel(c.k0),
            PhysParams(c.gamma, c.mu1, c.mu2),
            RegParams(),
            fluid_mode=fluid_mode,
            kinetic_source=self.kinetic_source,
            fluid_source=self.fluid_source if fluid_mode == "coupled" else None,
            tol=1e-12,
            **kw,
        )

    def initial_state(self) -> CoupledState:
        return CoupledState(self.f(0.0), self.fluid(0.0))


def observed_orders(hs, errors) -> list[float]:
    hs = np.asarray(hs, dtype=float)
    e = np.asarray(errors, dtype=float)
    return [float(np.log(e[i] / e[i + 1]) / np.log(hs[i] / hs[i + 1])) for i in range(len(e) - 1)]
