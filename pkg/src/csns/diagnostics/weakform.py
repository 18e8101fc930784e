"""Weak-form residual probes for the kinetic, continuity and momentum equations.

Test functions are tensor products of ``cos^4`` bumps (C^3, compact support)
in each variable times the time profile ``cos^2(pi t / (2 T))``, which equals
one at ``t = 0`` and vanishes with its derivative at the final time ``T``.
Time integrals treat the stored states as piecewise linear in time and
integrate them against the exact time profile (product quadrature), so a
steady trajectory has no time-quadrature error. In phase space the discrete
fields are read as piecewise-constant functions and paired with exact cell
means of the test functions: derivative means are face differences, so
summation by parts holds exactly, and plain means use Gauss-Legendre points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import PreconditionError
from ..fluid import cell_gradient, pressure, stress, velocity


@dataclass(frozen=True)
class Bump:
    """``prod_a cos^4(pi (z_a - c_a) / (2 r_a))`` on ``|z_a - c_a| < r_a``."""

    center: tuple[float, ...]
    radius: tuple[float, ...]

    def _axis(self, z, a):
        s = (z - self.center[a]) / self.radius[a]
        inside = np.abs(s) < 1
        th = 0.5 * np.pi * np.clip(s, -1, 1)
        c, sn = np.cos(th), np.sin(th)
        k = 0.5 * np.pi / self.radius[a]
        val = np.where(inside, c**4, 0.0)
        d1 = np.where(inside, -4 * c**3 * sn * k, 0.0)
        d2 = np.where(inside, (12 * c**2 * sn**2 - 4 * c**4) * k**2, 0.0)
        return val, d1, d2

    def evaluate(self, Z: np.ndarray):
        """Value, gradient (trailing axis) and Laplacian at points ``Z[..., dim]``."""
        dim = Z.shape[-1]
        parts = [self._axis(Z[..., a], a) for a in range(dim)]
        val = np.prod([p[0] for p in parts], axis=0)
        grad, lap = [], 0.0
        for a in range(dim):
            others = np.prod([parts[b][0] for b in range(dim) if b != a], axis=0) if dim > 1 else 1.0
            grad.append(parts[a][1] * others)
            lap = lap + parts[a][2] * others
        return val, np.stack(grad, axis=-1), lap

    def cell_means(self, centers, widths, order: int = 6):
        """Cell means over a tensor grid of ``phi``, ``grad phi``, ``lap phi``,
        ``z . grad phi`` and ``z_a phi``; the last two carry the coordinate weight."""
        nodes, weights = np.polynomial.legendre.leggauss(order)
        dim = len(centers)
        per = []
        for a, (c, h) in enumerate(zip(centers, widths)):
            lo, hi = c - 0.5 * h, c + 0.5 * h
            v_lo, d_lo, _ = self._axis(lo, a)
            v_hi, d_hi, _ = self._axis(hi, a)
            z = c[:, None] + 0.5 * h * nodes[None, :]
            vg = self._axis(z, a)[0]
            mean = (0.5 * weights * vg).sum(axis=1)
            zmean = (0.5 * weights * z * vg).sum(axis=1)
            d1 = (v_hi - v_lo) / h
            d2 = (d_hi - d_lo) / h
            zd1 = (hi * v_hi - lo * v_lo) / h - mean  # mean of z phi' by parts
            per.append((mean, d1, d2, zd1, zmean))

        def tensor(arrs):
            out = 1.0
            for a, arr in enumerate(arrs):
                shape = [1] * dim
                shape[a] = arr.size
                out = out * arr.reshape(shape)
            return out

        means = [p[0] for p in per]
        val = tensor(means)
        grad, lap, zgrad, zval = [], 0.0, 0.0, []
        for a in range(dim):
            swap = lambda k: [per[b][k] if b == a else means[b] for b in range(dim)]  # noqa: E731
            grad.append(tensor(swap(1)))
            lap = lap + tensor(swap(2))
            zgrad = zgrad + tensor(swap(3))
            zval.append(tensor(swap(4)))
        return val, np.stack(grad, axis=-1), lap, zgrad, np.stack(zval, axis=-1)

    def touches(self, lower, upper) -> bool:
        """Whether the support reaches the box boundary."""
        return any(c - r < lo or c + r > hi for c, r, lo, hi in zip(self.center, self.radius, lower, upper))


@dataclass(frozen=True)
class KineticTest:
    x: Bump
    v: Bump


def time_profile(t, T):
    th = 0.5 * np.pi * np.asarray(t) / T
    return np.cos(th) ** 2, -np.pi / T * np.cos(th) * np.sin(th)


def make_test_bank(grid, vgrid=None, count: int = 6, seed: int = 0, scales=(0.2, 0.3, 0.4)):
    """Seeded bank of interior bumps at several scales; kinetic tests also get a velocity bump."""
    rng = np.random.default_rng(seed)
    d = grid.dim
    bank = []
    for k in range(count):
        s = scales[k % len(scales)]
        r = tuple(s * e for e in grid.extents)
        c = tuple(rng.uniform(lo + ri, hi - ri) for lo, hi, ri in zip(grid.lower, grid.upper, r))
        xb = Bump(c, r)
        if vgrid is None:
            bank.append(xb)
        else:
            rv = tuple(0.5 * vgrid.vmax for _ in range(d))
            cv = tuple(rng.uniform(-0.4 * vgrid.vmax, 0.4 * vgrid.vmax) for _ in range(d))
            bank.append(KineticTest(xb, Bump(cv, rv)))
    return bank


def _tau_integral(t, T):
    """Antiderivative of ``cos^2(pi t / (2T))``."""
    return 0.5 * t + 0.5 * T / np.pi * np.sin(np.pi * t / T)


def time_weights(times, T):
    """Weights ``(w_tau, w_dtau)`` with ``sum_k w_k a_k = int tau (or tau') a(t) dt`` for ``a``
    piecewise linear through the samples ``a_k`` at ``times``."""
    t = np.asarray(times, dtype=float)
    w_tau = np.zeros_like(t)
    w_dtau = np.zeros_like(t)
    tau, _ = time_profile(t, T)
    for k in range(t.size - 1):
        t0, t1 = t[k], t[k + 1]
        h = t1 - t0
        if h <= 0:
            continue
        I0 = _tau_integral(t1, T) - _tau_integral(t0, T)  # int tau
        # int t tau dt by parts: [t P(t)] - int P, with P the antiderivative above
        Q = lambda x: 0.25 * x**2 - 0.5 * (T / np.pi) ** 2 * np.cos(np.pi * x / T)  # noqa: E731
        I1 = (t1 * _tau_integral(t1, T) - t0 * _tau_integral(t0, T)) - (Q(t1) - Q(t0))
        # hat functions l0 = (t1 - t)/h, l1 = (t - t0)/h
        w_tau[k] += (t1 * I0 - I1) / h
        w_tau[k + 1] += (I1 - t0 * I0) / h
        # int tau' l = [tau l] - int tau l'
        w_dtau[k] += -tau[k] + I0 / h
        w_dtau[k + 1] += tau[k + 1] - I0 / h
    return w_tau, w_dtau


def _check_kinetic_support(problem, test: KineticTest):
    g = problem.grid
    if any(g.periodic):
        return
    if test.x.touches(g.lower, g.upper):
        raise PreconditionError("kinetic test function must vanish on the outgoing phase boundary; its x-support reaches the wall")


def kinetic_residual(problem, snapshots, tests, kinetic_source=None) -> np.ndarray:
    """Residual of the kinetic weak form for each test function."""
    g, vg = problem.grid, problem.vgrid
    d = g.dim
    T = snapshots[-1].t
    w_tau, w_dtau = time_weights([s.t for s in snapshots], T)
    X = g.mesh.reshape(g.shape + (1,) * d + (d,))
    V = vg.mesh.reshape((1,) * d + vg.shape + (d,))
    dV = g.cell_volume * vg.cell_volume
    out = []
    for test in tests:
        _check_kinetic_support(problem, test)
        px, gx, _, _, _ = test.x.cell_means(g.centers, g.dx)
        pv, gv, lv, zgv, zv = test.v.cell_means(vg.centers, vg.dv)
        px = px.reshape(g.shape + (1,) * d)
        gx = gx.reshape(g.shape + (1,) * d + (d,))
        pv = pv.reshape((1,) * d + vg.shape)
        gv = gv.reshape((1,) * d + vg.shape + (d,))
        lv = lv.reshape((1,) * d + vg.shape)
        zgv = zgv.reshape((1,) * d + vg.shape)
        zv = zv.reshape((1,) * d + vg.shape + (d,))
        phi = px * pv
        v_grad_x = np.sum(zv * gx, axis=-1)
        total = 0.0
        for wt, wd, st in zip(w_tau, w_dtau, snapshots):
            mom = problem.moments(st.f)
            u = st.fluid.u
            U = problem.chi(u)[..., None] * u
            b = (U + mom.E).reshape(g.shape + (1,) * d + (d,))
            c = (1 + mom.q).reshape(g.shape + (1,) * d)
            drift_term = np.sum(b * gv, axis=-1) - c * zgv  # mean of (b - c v) . grad_v phi_v
            space = float((st.f * (v_grad_x + px * drift_term + px * lv)).sum()) * dV
            if kinetic_source is not None:
                space += float((np.broadcast_to(kinetic_source(st.t, X, V), st.f.shape) * phi).sum()) * dV
            total += wd * float((st.f * phi).sum()) * dV + wt * space
        total += float((snapshots[0].f * phi).sum()) * dV
        out.append(total)
    return np.asarray(out)


def continuity_residual(problem, snapshots, tests, rho_source=None) -> np.ndarray:
    g = problem.grid
    T = snapshots[-1].t
    w_tau, w_dtau = time_weights([s.t for s in snapshots], T)
    eps = problem.reg.eps
    out = []
    for test in tests:
        psi, gpsi, lpsi, _, _ = test.cell_means(g.centers, g.dx)
        total = 0.0
        for wt, wd, st in zip(w_tau, w_dtau, snapshots):
            rho, m = st.fluid.rho, st.fluid.m
            space = float((np.sum(m * gpsi, axis=-1) + eps * rho * lpsi).sum())
            if rho_source is not None:
                space += float((rho_source(st.t) * psi).sum())
            total += (wd * float((rho * psi).sum()) + wt * space) * g.cell_volume
        total += float((snapshots[0].fluid.rho * psi).sum()) * g.cell_volume
        out.append(total)
    return np.asarray(out)


def momentum_residual(problem, snapshots, tests, momentum_source=None) -> np.ndarray:
    """Residual vector (one entry per component) for each test function; returns shape ``(tests, dim)``."""
    g, vg = problem.grid, problem.vgrid
    d = g.dim
    phys, reg, bd = problem.phys, problem.reg, problem.boundary
    T = snapshots[-1].t
    w_tau, w_dtau = time_weights([s.t for s in snapshots], T)
    vaxes = tuple(range(d, 2 * d))
    zero_b = {s: np.zeros_like(v) for s, v in bd.u_B.items()}
    out = []
    for test in tests:
        psi, gpsi, _, _, _ = test.cell_means(g.centers, g.dx)
        total = np.zeros(d)
        for wt, wd, st in zip(w_tau, w_dtau, snapshots):
            rho, m = st.fluid.rho, st.fluid.m
            u = velocity(rho, m)
            G = cell_gradient(g, u, bd.u_B)  # G[..., i, c] = d_c u_i
            S = stress(G, phys)
            p = pressure(rho, phys, reg)
            n = st.f.sum(axis=vaxes) * vg.cell_volume
            j = np.stack([(st.f * vg.mesh[..., a]).sum(axis=vaxes) for a in range(d)], axis=-1) * vg.cell_volume
            U = problem.chi(u)[..., None] * u
            # phi = psi e_k ; grad phi[i, c] = delta_ik d_c psi
            conv = np.einsum("...i,...c,...c->...i", m, u, gpsi)
            pres = p[..., None] * gpsi
            visc = np.einsum("...ic,...c->...i", S, gpsi)
            space = conv + pres - visc + (j - n[..., None] * U) * psi[..., None]
            if reg.eps > 0:
                grad_rho = cell_gradient(g, rho, None)
                Gw = cell_gradient(g, u - bd.u_inf, zero_b)
                quart = np.sum(Gw**2, axis=(-2, -1))[..., None, None] * Gw
                space = space - reg.eps * (np.einsum("...ic,...c->...i", G, grad_rho) * psi[..., None] + np.einsum("...ic,...c->...i", quart, gpsi))
            if momentum_source is not None:
                space = space + momentum_source(st.t) * psi[..., None]
            val = wd * m * psi[..., None] + wt * space
            total += val.reshape(-1, d).sum(axis=0) * g.cell_volume
        total += (snapshots[0].fluid.m * psi[..., None]).reshape(-1, d).sum(axis=0) * g.cell_volume
        out.append(total)
    return np.asarray(out)


def weakform_residual(problem, snapshots, bank_x=None, bank_kinetic=None, sources=None) -> dict:
    """Residual table for the three weak forms.

    ``sources`` may provide ``kinetic(t, x, v)``, ``rho(t)`` and ``momentum(t)``
    for manufactured-solution runs.
    """
    sources = sources or {}
    if bank_x is None:
        bank_x = make_test_bank(problem.grid)
    if bank_kinetic is None:
        bank_kinetic = make_test_bank(problem.grid, problem.vgrid)
    return {
        "kinetic": kinetic_residual(problem, snapshots, bank_kinetic, sources.get("kinetic")),
        "continuity": continuity_residual(problem, snapshots, bank_x, sources.get("rho")),
        "momentum": momentum_residual(problem, snapshots, bank_x, sources.get("momentum")),
    }
