"""Kinetic Cucker-Smale-Fokker-Planck solver.

One step is the Strang composition transport(dt/2), velocity(dt), transport(dt/2):

* transport: first-order upwind in x per velocity cell, with the inflow trace
  ``g`` injected on incoming faces and free outflow elsewhere;
* velocity: backward-Euler drift-diffusion with Chang-Cooper (exponentially
  fitted) fluxes, drift ``U_N + E - (1 + q) v`` and unit diffusion, zero flux
  at ``|v_i| = V_max``.

The sampled Gaussian centred at ``(U_N + E) / (1 + q)`` with temperature
``1 / (1 + q)`` is an exact discrete steady state of the velocity step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import parallel
from .errors import StepSizeError
from .grid import BoundaryData, SpatialGrid, VelocityGrid, axis_slice
from .kernel import AlignmentMoments

KAPPA0_DEFAULT = 5


@dataclass
class DistributionField:
    values: np.ndarray
    grid: SpatialGrid
    vgrid: VelocityGrid
    t: float = 0.0

    @property
    def mass(self) -> float:
        return float(self.values.sum()) * self.grid.cell_volume * self.vgrid.cell_volume

    def copy(self) -> "DistributionField":
        return DistributionField(self.values.copy(), self.grid, self.vgrid, self.t)


@dataclass
class MomentSet:
    n: np.ndarray
    j: np.ndarray
    m: np.ndarray  # global |v|^kappa moments, kappa = 0..kappa0

    @property
    def mass(self) -> float:
        return float(self.m[0])


@dataclass
class BoundaryFlux:
    """Time-integrated phase-boundary fluxes ``int (v.nu) |v|^k f`` for k = 0..kappa0.

    ``inflow`` is the Sigma^- part (non-positive), ``outflow`` the Sigma^+ part.
    """

    inflow: np.ndarray
    outflow: np.ndarray
    g_max: float = 0.0

    @classmethod
    def zeros(cls, kappa0: int) -> "BoundaryFlux":
        k = max(kappa0, 2) + 1
        return cls(np.zeros(k), np.zeros(k))

    @property
    def net(self) -> np.ndarray:
        return self.inflow + self.outflow

    def __iadd__(self, other: "BoundaryFlux") -> "BoundaryFlux":
        self.inflow = self.inflow + other.inflow
        self.outflow = self.outflow + other.outflow
        self.g_max = max(self.g_max, other.g_max)
        return self


@dataclass
class KineticStepInfo:
    dt: float
    flux: BoundaryFlux
    U_N: np.ndarray
    moments: AlignmentMoments
    n_star: np.ndarray
    j_star: np.ndarray
    drag_exchange: np.ndarray  # momentum gained by the particles from drag
    f_star: np.ndarray | None = field(default=None, repr=False)


def _vaxes(d: int) -> tuple[int, ...]:
    return tuple(range(d, 2 * d))


def transport_cfl(grid: SpatialGrid, vgrid: VelocityGrid) -> float:
    """Largest ``dt`` with ``max|v_a| dt / dx_a <= 1`` on every axis."""
    return min(h / float(np.max(np.abs(c))) for h, c in zip(grid.dx, vgrid.centers))


def transport_step(
    f: np.ndarray,
    grid: SpatialGrid,
    vgrid: VelocityGrid,
    dt: float,
    boundary: BoundaryData | None = None,
    t: float = 0.0,
    kappa0: int = KAPPA0_DEFAULT,
) -> tuple[np.ndarray, BoundaryFlux]:
    """Upwind free transport over ``dt``, one axis sweep after another."""
    flux = BoundaryFlux.zeros(kappa0)
    if dt == 0:
        return f.copy(), flux
    limit = transport_cfl(grid, vgrid)
    if dt > limit * (1 + 1e-12):
        raise StepSizeError(f"transport CFL violated: dt={dt:g} > {limit:g}", limit)
    d = grid.dim
    nd = 2 * d
    weights = vgrid.speed[None, ...] ** np.arange(flux.inflow.size).reshape((-1,) + (1,) * d)
    tmid = t + 0.5 * dt
    f = f.copy()
    for a in range(d):
        va = vgrid.centers[a].reshape([1] * (d + a) + [-1] + [1] * (d - a - 1))
        vp, vm = np.maximum(va, 0.0), np.minimum(va, 0.0)
        first = f[axis_slice(nd, a, slice(0, 1))]
        last = f[axis_slice(nd, a, slice(-1, None))]
        inner = vp * f[axis_slice(nd, a, slice(None, -1))] + vm * f[axis_slice(nd, a, slice(1, None))]
        if grid.periodic[a]:
            wrap = vp * last + vm * first
            F = np.concatenate([wrap, inner, wrap], axis=a)
        else:
            g_lo = boundary.sample_g(grid, vgrid, (a, 0), tmid) if boundary is not None else 0.0
            g_hi = boundary.sample_g(grid, vgrid, (a, 1), tmid) if boundary is not None else 0.0
            F = np.concatenate([vp * g_lo + vm * first, inner, vp * last + vm * g_hi], axis=a)
            area = grid.face_area(a) * vgrid.cell_volume * dt
            # outward normal flux densities (v . nu) f, split by the sign of v . nu
            parts_in = [-vp * g_lo, vm * g_hi]
            parts_out = [-vm * first, vp * last]
            for p_in, p_out in zip(parts_in, parts_out):
                s_in = np.sum(np.broadcast_to(p_in, first.shape), axis=tuple(range(d)))
                s_out = np.sum(np.broadcast_to(p_out, first.shape), axis=tuple(range(d)))
                flux.inflow = flux.inflow + (weights * s_in).reshape(weights.shape[0], -1).sum(axis=1) * area
                flux.outflow = flux.outflow + (weights * s_out).reshape(weights.shape[0], -1).sum(axis=1) * area
            if boundary is not None and boundary.g is not None:
                flux.g_max = max(flux.g_max, float(np.max(g_lo)), float(np.max(g_hi)))
        f = f - (dt / grid.dx[a]) * np.diff(F, axis=a)
    return f, flux


def truncate_velocity(u: np.ndarray, N: float | None) -> np.ndarray:
    """``u * chi_{|u| <= N}``; ``N = None`` disables the truncation."""
    if N is None or not np.isfinite(N):
        return u
    keep = np.linalg.norm(u, axis=-1) <= N
    return np.where(keep[..., None], u, 0.0)


def bernoulli(w: np.ndarray) -> np.ndarray:
    """``B(w) = w / (exp(w) - 1)`` with ``B(0) = 1``."""
    small = np.abs(w) < 1e-8
    safe = np.where(small, 1.0, w)
    return np.where(small, 1.0 - 0.5 * w, safe / np.expm1(safe))


def _drift(grid, U, moments, N):
    U_N = truncate_velocity(U, N)
    if moments is None:
        b = U_N
        c = np.ones(grid.shape)
    else:
        b = U_N + moments.E
        c = 1.0 + moments.q
    return U_N, b, c


def velocity_admissible_dt(grid, vgrid, U, moments=None, N=None, implicit=True) -> float:
    _, b, c = _drift(grid, np.broadcast_to(U, grid.shape + (grid.dim,)), moments, N)
    limit = np.inf
    for a, (vf, h) in enumerate(zip(vgrid.faces, vgrid.dv)):
        amax = float(np.max(np.abs(b[..., a, None] - c[..., None] * vf))) if vf.size else 0.0
        if amax > 0:
            limit = min(limit, h / amax)
        if not implicit:
            limit = min(limit, 1.0 / (amax / h + 2.0 / h**2))
    return limit


def _thomas(lower, diag, upper, rhs):
    """Batched tridiagonal solve along the last axis (lower[0], upper[-1] unused)."""
    K = rhs.shape[-1]
    cp = np.empty(np.broadcast_shapes(upper.shape, rhs.shape))
    dp = np.empty_like(cp)
    x = np.empty_like(cp)
    m = diag[..., 0]
    cp[..., 0] = upper[..., 0] / m
    dp[..., 0] = rhs[..., 0] / m
    for k in range(1, K):
        m = diag[..., k] - lower[..., k] * cp[..., k - 1]
        cp[..., k] = upper[..., k] / m if k < K - 1 else 0.0
        dp[..., k] = (rhs[..., k] - lower[..., k] * dp[..., k - 1]) / m
    x[..., K - 1] = dp[..., K - 1]
    for k in range(K - 2, -1, -1):
        x[..., k] = dp[..., k] - cp[..., k] * x[..., k + 1]
    return x


def _velocity_axis(f, b_a, c, vf, dv, dt, d, a, implicit):
    """Drift-diffusion along velocity axis ``a`` for every line of the phase array."""
    F = np.moveaxis(f, d + a, -1)  # (*nx, other v..., K)
    K = F.shape[-1]
    pad = (1,) * (d - 1)
    w = dv * (b_a[..., None] - c[..., None] * vf)  # (*nx, K-1)
    w = w.reshape(w.shape[:-1] + pad + (K - 1,))
    alpha = bernoulli(-w) / dv
    beta = bernoulli(w) / dv
    r = dt / dv
    if not implicit:
        J = alpha * F[..., :-1] - beta * F[..., 1:]
        zero = np.zeros(J.shape[:-1] + (1,))
        J = np.concatenate([zero, J, zero], axis=-1)
        out = F - r * np.diff(J, axis=-1)
        return np.moveaxis(out, -1, d + a)
    zero = np.zeros(alpha.shape[:-1] + (1,))
    a_full = np.concatenate([alpha, zero], axis=-1)  # alpha_k, k = 0..K-1 (last zero)
    b_prev = np.concatenate([zero, beta], axis=-1)  # beta_{k-1}
    diag = 1.0 + r * (a_full + b_prev)
    lower = -r * np.concatenate([zero, alpha], axis=-1)
    upper = -r * np.concatenate([beta, zero], axis=-1)
    out = _thomas(lower, diag, upper, F)
    return np.moveaxis(out, -1, d + a)


def velocity_step(
    f: np.ndarray,
    grid: SpatialGrid,
    vgrid: VelocityGrid,
    dt: float,
    U: np.ndarray,
    moments: AlignmentMoments | None = None,
    N: float | None = None,
    implicit: bool = True,
    source: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``f_t + div_v((U_N + E - (1+q) v) f) - lap_v f = 0`` over ``dt`` in each cell.

    Returns the new field and the truncated drag velocity ``U_N`` that was used.
    """
    d = grid.dim
    U = np.broadcast_to(np.asarray(U, dtype=float), grid.shape + (d,))
    U_N, b, c = _drift(grid, U, moments, N)
    if dt == 0:
        return f.copy(), U_N
    limit = velocity_admissible_dt(grid, vgrid, U, moments, N, implicit)
    if dt > limit * (1 + 1e-12):
        kind = "drift CFL" if implicit else "explicit drift-diffusion stability"
        raise StepSizeError(f"velocity step {kind} violated: dt={dt:g} > {limit:g}", limit)
    if source is not None:
        f = f + dt * source
    out = np.empty_like(f)

    def block(i0, i1):
        g = f[i0:i1]
        for a in range(d):
            g = _velocity_axis(g, b[i0:i1, ..., a], c[i0:i1], vgrid.faces[a], vgrid.dv[a], dt, d, a, implicit)
        return g

    parallel.map_rows(block, f.shape[0], out, min_chunk=4)
    return out, U_N


def kinetic_step(
    f: np.ndarray,
    grid: SpatialGrid,
    vgrid: VelocityGrid,
    dt: float,
    U: np.ndarray,
    moments: AlignmentMoments | None,
    N: float | None = None,
    boundary: BoundaryData | None = None,
    t: float = 0.0,
    kappa0: int = KAPPA0_DEFAULT,
    implicit: bool = True,
    source=None,
    keep_star: bool = False,
) -> tuple[np.ndarray, KineticStepInfo]:
    """Strang step transport/velocity/transport.

    ``source`` is an optional callable ``S(t, x, v)`` (manufactured forcing),
    applied in the velocity sub-step at the step midpoint.
    """
    d = grid.dim
    if moments is None:
        moments = AlignmentMoments(np.zeros(grid.shape), np.zeros(grid.shape + (d,)))
    if dt == 0:
        U_N = truncate_velocity(np.broadcast_to(U, grid.shape + (d,)), N)
        n, j = _cell_moments(f, vgrid, d)
        return f.copy(), KineticStepInfo(0.0, BoundaryFlux.zeros(kappa0), U_N, moments, n, j, np.zeros(d), None)
    f1, flux = transport_step(f, grid, vgrid, 0.5 * dt, boundary, t, kappa0)
    src = None
    if source is not None:
        x = grid.mesh.reshape(grid.shape + (1,) * d + (d,))
        v = vgrid.mesh.reshape((1,) * d + vgrid.shape + (d,))
        src = np.broadcast_to(source(t + 0.5 * dt, x, v), f.shape)
    f2, U_N = velocity_step(f1, grid, vgrid, dt, U, moments, N, implicit, src)
    f3, flux2 = transport_step(f2, grid, vgrid, 0.5 * dt, boundary, t + 0.5 * dt, kappa0)
    flux += flux2
    n, j = _cell_moments(f2, vgrid, d)
    drag = dt * grid.cell_volume * (n[..., None] * U_N - j).reshape(-1, d).sum(axis=0)
    info = KineticStepInfo(dt, flux, U_N, moments, n, j, drag, f2 if keep_star else None)
    return f3, info


def _cell_moments(f, vgrid, d):
    vaxes = _vaxes(d)
    dv = vgrid.cell_volume
    n = f.sum(axis=vaxes) * dv
    j = np.stack([(f * vgrid.mesh[..., a]).sum(axis=vaxes) for a in range(d)], axis=-1) * dv
    return n, j


def compute_momentset(f: np.ndarray, grid: SpatialGrid, vgrid: VelocityGrid, kappa0: int = KAPPA0_DEFAULT) -> MomentSet:
    """Number density, particle momentum density and global ``|v|^k`` moments."""
    d = grid.dim
    n, j = _cell_moments(f, vgrid, d)
    vsum = f.reshape((-1,) + vgrid.shape).sum(axis=0)
    speed = vgrid.speed
    w = grid.cell_volume * vgrid.cell_volume
    m = np.array([float((vsum * speed**k).sum()) * w for k in range(kappa0 + 1)])
    return MomentSet(n, j, m)


def moment(f: np.ndarray, grid: SpatialGrid, vgrid: VelocityGrid, kappa: float) -> float:
    vsum = f.reshape((-1,) + vgrid.shape).sum(axis=0)
    return float((vsum * vgrid.speed**kappa).sum()) * grid.cell_volume * vgrid.cell_volume


def moment_identity_residual(
    f_before: list[np.ndarray] | np.ndarray,
    f_after: list[np.ndarray] | np.ndarray,
    infos: list[KineticStepInfo],
    grid: SpatialGrid,
    vgrid: VelocityGrid,
    kappa: int,
) -> np.ndarray:
    """Per-step residual of the discrete ``|v|^kappa`` moment balance.

    The balance compared against is

        d/dt m_k + (boundary flux of |v|^k) - k (k + d - 2) m_{k-2}
            = k * sum f (|v|^{k-2} (E + U_N) . v - |v|^k (q + 1)),

    with the right-hand side evaluated on the velocity sub-step state (the
    infos must carry ``f_star``). For ``kappa = 0`` this is the mass balance.
    In one dimension with ``kappa = 1`` the diffusion term is the point
    value ``2 int f(x, 0) dx`` instead (``|v|'' = 2 delta_0``).
    """
    d = grid.dim
    w = grid.cell_volume * vgrid.cell_volume
    speed = vgrid.speed
    out = []
    for fb, fa, info in zip(f_before, f_after, infos):
        dm = moment(fa, grid, vgrid, kappa) - moment(fb, grid, vgrid, kappa)
        lhs = (dm + info.flux.net[kappa]) / info.dt
        if kappa == 0:
            out.append(lhs)
            continue
        fs = info.f_star
        if fs is None:
            raise ValueError("moment_identity_residual needs infos recorded with keep_star=True")
        if d == 1 and kappa == 1:
            # |v|'' = 2 delta_0 in one dimension: the value of f at v = 0 is the
            # mean of the two centre cells
            c0 = vgrid.shape[0] // 2
            diff_term = 2.0 * float(0.5 * (fs[..., c0 - 1] + fs[..., c0]).sum()) * grid.cell_volume
        else:
            diff_term = kappa * (kappa + d - 2) * float((fs * speed ** (kappa - 2)).sum()) * w
        drift = info.U_N + info.moments.E  # (*nx, d)
        pshape = grid.shape + (1,) * d
        vdotb = sum(drift[..., a].reshape(pshape) * vgrid.mesh[..., a] for a in range(d))
        c = (info.moments.q + 1.0).reshape(pshape)
        rhs = kappa * float((fs * (speed ** (kappa - 2) * vdotb - speed**kappa * c)).sum()) * w
        out.append(lhs - diff_term - rhs)
    return np.asarray(out)


def linf_bound(f0_max: float, g_sup: float, sup_q: float, t: float, dim: int) -> float:
    """``exp(C1 t) (max f0 + sup g)`` with ``C1 = dim (1 + sup q)``."""
    return float(np.exp(dim * (1.0 + sup_q) * t) * (f0_max + g_sup))


def maxwellian(vgrid: VelocityGrid, density=1.0, mean=None, temperature=1.0) -> np.ndarray:
    """Sampled Gaussian ``n (2 pi T)^{-d/2} exp(-|v - w|^2 / (2T))`` on the velocity mesh.

    ``density``/``mean`` may carry leading spatial axes (``mean`` with a trailing component axis).
    """
    d = vgrid.dim
    density = np.asarray(density, dtype=float)
    mean = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)
    temperature = np.asarray(temperature, dtype=float)
    lead = density.shape
    mshp = mean.shape[:-1]
    mean = mean.reshape(mshp + (1,) * d + (d,))
    T = temperature.reshape(temperature.shape + (1,) * d)
    r2 = np.sum((vgrid.mesh - mean) ** 2, axis=-1)
    shape = np.broadcast_shapes(lead, mshp, temperature.shape)
    return density.reshape(lead + (1,) * d) * (2 * np.pi * T) ** (-0.5 * d) * np.exp(-0.5 * r2 / T) + np.zeros(shape + vgrid.shape)
