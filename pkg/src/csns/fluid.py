"""Finite-volume solver for the regularized compressible Navier-Stokes system.

Unknowns are the cell density ``rho`` and momentum ``m = rho u``. A step is
continuity then momentum, both using the velocity of the old time level:

* continuity: upwind advection with neighbour-averaged face velocities plus
  ``eps`` diffusion (explicit, or backward Euler when the explicit update
  would lose positivity); the total boundary flux is ``rho_B u_B . nu`` on
  inflow faces and ``rho u_B . nu`` elsewhere;
* momentum: Rusanov convection, pressure ``rho^gamma + delta rho^beta``,
  centred Newtonian stress, the quartic ``eps |grad w|^2 grad w`` flux with
  ``w = u - u_inf``, the ``eps grad rho . grad u`` term, and a semi-implicit
  drag ``chi (j - n u')``; the velocity equals ``u_B`` on boundary faces.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, SchemeFailure, StepSizeError
from .grid import INFLOW, BoundaryData, SpatialGrid, axis_slice, face_values, velocity_divergence


@dataclass(frozen=True)
class PhysParams:
    gamma: float = 5.0 / 3.0
    mu1: float = 1.0
    mu2: float = 0.0

    def __post_init__(self):
        if not self.gamma > 1:
            raise ConfigError(f"physics.gamma must exceed 1, got {self.gamma}")
        if not self.mu1 > 0:
            raise ConfigError(f"physics.mu1 must be positive, got {self.mu1}")
        if not 2 * self.mu1 + 3 * self.mu2 >= 0:
            raise ConfigError(f"physics: 2*mu1 + 3*mu2 must be >= 0, got {2 * self.mu1 + 3 * self.mu2}")
        if self.gamma <= 1.5:
            warnings.warn(f"gamma={self.gamma} <= 3/2 lies outside the existence theory's range", stacklevel=3)


@dataclass(frozen=True)
class RegParams:
    eps: float = 0.0
    delta: float = 0.0
    beta: float | None = None
    N: float | None = None

    def __post_init__(self):
        if self.eps < 0:
            raise ConfigError(f"regularization.eps must be >= 0, got {self.eps}")
        if self.delta < 0:
            raise ConfigError(f"regularization.delta must be >= 0, got {self.delta}")
        if self.N is not None and not self.N > 0:
            raise ConfigError(f"regularization.N must be positive, got {self.N}")

    def check_beta(self, gamma: float) -> None:
        if self.delta > 0:
            bound = max(gamma, 4.5)
            if self.beta is None or not self.beta > bound:
                raise ConfigError(f"regularization.beta must satisfy beta > max(gamma, 9/2) = {bound:g} when delta > 0, got {self.beta}")

    @property
    def beta_value(self) -> float:
        return 0.0 if self.beta is None else float(self.beta)


@dataclass
class FluidField:
    rho: np.ndarray
    m: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return velocity(self.rho, self.m)

    def copy(self) -> "FluidField":
        return FluidField(self.rho.copy(), self.m.copy())

    def mass(self, grid: SpatialGrid) -> float:
        return float(self.rho.sum()) * grid.cell_volume

    def kinetic_energy(self, grid: SpatialGrid) -> float:
        return 0.5 * float((self.rho * np.sum(self.u**2, axis=-1)).sum()) * grid.cell_volume


def velocity(rho: np.ndarray, m: np.ndarray) -> np.ndarray:
    safe = np.where(rho > 0, rho, 1.0)
    return np.where((rho > 0)[..., None], m / safe[..., None], 0.0)


def pressure(rho: np.ndarray, phys: PhysParams, reg: RegParams) -> np.ndarray:
    p = rho**phys.gamma
    if reg.delta > 0:
        p = p + reg.delta * rho**reg.beta_value
    return p


def sound_speed(rho: np.ndarray, phys: PhysParams, reg: RegParams) -> np.ndarray:
    r = np.maximum(rho, 0.0)
    c2 = phys.gamma * r ** (phys.gamma - 1)
    if reg.delta > 0:
        c2 = c2 + reg.delta * reg.beta_value * r ** (reg.beta_value - 1)
    return np.sqrt(c2)


def stress(G: np.ndarray, phys: PhysParams) -> np.ndarray:
    """``S = mu1 (G + G^T) + mu2 tr(G) I`` for ``G[..., i, c] = d_c u_i``."""
    d = G.shape[-1]
    tr = np.trace(G, axis1=-2, axis2=-1)
    return phys.mu1 * (G + np.swapaxes(G, -1, -2)) + phys.mu2 * tr[..., None, None] * np.eye(d)


def stress_dissipation(G: np.ndarray, phys: PhysParams) -> np.ndarray:
    """Pointwise ``S(G) : G``."""
    return np.sum(stress(G, phys) * G, axis=(-2, -1))


# ----------------------------------------------------------------------------- gradients


def _faces_for(grid: SpatialGrid, q: np.ndarray, axis: int, bvals):
    """Face values of a cell field along ``axis``; ``bvals`` maps side -> face value or None (copy)."""
    if grid.periodic[axis]:
        return face_values(grid, axis, q)
    lo = bvals.get((axis, 0)) if bvals is not None else None
    hi = bvals.get((axis, 1)) if bvals is not None else None
    sl = axis_slice(q.ndim, axis, slice(0, 1))
    sh = axis_slice(q.ndim, axis, slice(-1, None))
    lo = q[sl] if lo is None else lo
    hi = q[sh] if hi is None else hi
    return face_values(grid, axis, q, lo, hi)


def cell_gradient(grid: SpatialGrid, q: np.ndarray, bvals=None) -> np.ndarray:
    """Centred cell gradient via face averages; trailing axis is the derivative direction.

    ``bvals`` gives Dirichlet values per side (face-shaped, with the same
    trailing component axes as ``q``); missing sides use a zero-gradient copy.
    """
    parts = []
    for a in range(grid.dim):
        F = _faces_for(grid, q, a, bvals)
        parts.append(np.diff(F, axis=a) / grid.dx[a])
    return np.stack(parts, axis=-1)


def face_gradient(grid: SpatialGrid, u: np.ndarray, axis: int, bvals, Gcell: np.ndarray | None = None) -> np.ndarray:
    """Full velocity gradient ``G[..., i, c]`` on the faces normal to ``axis``.

    The normal derivative is the two-point difference (half-cell to the
    Dirichlet value on boundary faces); tangential derivatives average the
    neighbouring cell gradients, copying the edge cell on boundary faces.
    """
    d = grid.dim
    nd = d + 1
    first = u[axis_slice(nd, axis, slice(0, 1))]
    last = u[axis_slice(nd, axis, slice(-1, None))]
    inner = np.diff(u, axis=axis) / grid.dx[axis]
    h = grid.dx[axis]
    if grid.periodic[axis]:
        wrap = (first - last) / h
        normal = np.concatenate([wrap, inner, wrap], axis=axis)
    else:
        lo = (first - bvals[(axis, 0)]) / (0.5 * h)
        hi = (bvals[(axis, 1)] - last) / (0.5 * h)
        normal = np.concatenate([lo, inner, hi], axis=axis)
    if Gcell is None:
        Gcell = cell_gradient(grid, u, bvals)
    G = _faces_for(grid, Gcell, axis, None).copy()
    G[..., :, axis] = normal
    return G


# ----------------------------------------------------------------------------- continuity


@dataclass
class ContinuityInfo:
    flux: list[np.ndarray]  # axis-direction mass fluxes on the n+1 faces of each axis (advective + diffusive)
    advective_flux: list[np.ndarray]
    boundary_mass_flux: float  # time-integrated outward mass flux through the boundary
    div_u: np.ndarray
    implicit: bool
    admissible_dt: float


def _neumann_laplacian(grid: SpatialGrid) -> sp.csr_matrix:
    ops = []
    for a, (n, h) in enumerate(zip(grid.shape, grid.dx)):
        main = -2.0 * np.ones(n)
        off = np.ones(n - 1)
        L = sp.diags([off, main, off], [-1, 0, 1], format="lil")
        if grid.periodic[a]:
            L[0, n - 1] += 1.0
            L[n - 1, 0] += 1.0
        else:
            L[0, 0] = -1.0
            L[n - 1, n - 1] = -1.0
        ops.append(sp.csr_matrix(L) / h**2)
    total = None
    for a, La in enumerate(ops):
        term = None
        for b, n in enumerate(grid.shape):
            blk = La if a == b else sp.identity(n, format="csr")
            term = blk if term is None else sp.kron(term, blk, format="csr")
        total = term if total is None else total + term
    return total.tocsr()


def boundary_normal_velocity(boundary: BoundaryData, side) -> np.ndarray:
    return boundary.tags.normal_velocity[side]


def continuity_advective_flux(grid: SpatialGrid, rho: np.ndarray, u: np.ndarray, boundary: BoundaryData):
    """Axis-direction upwind mass fluxes and face normal velocities, per axis."""
    fluxes, speeds = [], []
    nd = grid.dim
    for a in range(grid.dim):
        lo = boundary.u_B[(a, 0)][..., a] if not grid.periodic[a] else None
        hi = boundary.u_B[(a, 1)][..., a] if not grid.periodic[a] else None
        uf = face_values(grid, a, u[..., a], lo, hi)
        first = rho[axis_slice(nd, a, slice(0, 1))]
        last = rho[axis_slice(nd, a, slice(-1, None))]
        left = np.concatenate([last, rho], axis=a)  # upwind candidates for faces 0..n
        right = np.concatenate([rho, first], axis=a)
        F = np.where(uf >= 0, left, right) * uf
        if not grid.periodic[a]:
            for s, idx, cell in ((0, 0, first), (1, -1, last)):
                side = (a, s)
                inflow = boundary.tags.tags[side] == INFLOW
                rb = np.where(inflow, boundary.rho_B[side], cell)
                face = axis_slice(nd, a, slice(0, 1) if s == 0 else slice(-1, None))
                F[face] = rb * boundary.u_B[side][..., a]
        fluxes.append(F)
        speeds.append(uf)
    return fluxes, speeds


def continuity_step(
    grid: SpatialGrid,
    rho: np.ndarray,
    u: np.ndarray,
    dt: float,
    eps: float,
    boundary: BoundaryData,
    source: np.ndarray | None = None,
) -> tuple[np.ndarray, ContinuityInfo]:
    """``rho_t + div(rho u) = eps lap rho`` over ``dt`` (plus an optional cell source)."""
    nd = grid.dim
    adv_flux, speeds = continuity_advective_flux(grid, rho, u, boundary)
    adv = dt * sum(2.0 * float(np.max(np.abs(s))) / h for s, h in zip(speeds, grid.dx))
    admissible = dt / adv if adv > 0 else np.inf
    div_u = velocity_divergence(grid, u, boundary.u_B)
    if dt == 0:
        zero = [np.zeros_like(F) for F in adv_flux]
        return rho.copy(), ContinuityInfo(zero, zero, 0.0, div_u, False, admissible)
    if adv > 1 + 1e-12:
        raise StepSizeError(f"continuity advective CFL violated: number {adv:.4g} > 1", admissible)
    dnum = dt * eps * sum(1.0 / h**2 for h in grid.dx)
    implicit = eps > 0 and adv + 2 * dnum > 1
    rhs = rho - dt * sum(np.diff(F, axis=a) / h for a, (F, h) in enumerate(zip(adv_flux, grid.dx)))
    if source is not None:
        rhs = rhs + dt * source
    diff_flux = []
    if eps > 0 and not implicit:
        for a in range(grid.dim):
            diff_flux.append(_diffusive_flux(grid, rho, a, eps))
        new = rhs - dt * sum(np.diff(F, axis=a) / h for a, (F, h) in enumerate(zip(diff_flux, grid.dx)))
    elif implicit:
        A = sp.identity(grid.ncells, format="csr") - dt * eps * _neumann_laplacian(grid)
        new = spla.spsolve(A.tocsc(), rhs.ravel()).reshape(grid.shape)
        diff_flux = [_diffusive_flux(grid, new, a, eps) for a in range(grid.dim)]
    else:
        new = rhs
        diff_flux = [np.zeros_like(F) for F in adv_flux]
    total = [Fa + Fd for Fa, Fd in zip(adv_flux, diff_flux)]
    bflux = 0.0
    for a, s in grid.sides:
        face = axis_slice(nd, a, slice(0, 1) if s == 0 else slice(-1, None))
        sign = -1.0 if s == 0 else 1.0
        bflux += sign * float(adv_flux[a][face].sum()) * grid.face_area(a) * dt
    if not np.all(np.isfinite(new)):
        raise SchemeFailure("non-finite density after continuity step", dump={"rho": rho, "u": u})
    if eps > 0 and np.any(new <= 0):
        raise SchemeFailure(f"non-positive density {float(new.min()):.3e} with eps > 0", dump={"rho": rho, "u": u})
    return new, ContinuityInfo(total, adv_flux, bflux, div_u, bool(implicit), admissible)


def _diffusive_flux(grid: SpatialGrid, rho: np.ndarray, a: int, eps: float) -> np.ndarray:
    nd = grid.dim
    inner = -eps * np.diff(rho, axis=a) / grid.dx[a]
    first = rho[axis_slice(nd, a, slice(0, 1))]
    last = rho[axis_slice(nd, a, slice(-1, None))]
    if grid.periodic[a]:
        wrap = -eps * (first - last) / grid.dx[a]
    else:
        wrap = np.zeros_like(first)
    return np.concatenate([wrap, inner, wrap], axis=a)


def density_bounds(rho0: np.ndarray, boundary: BoundaryData | None, div_integral: float) -> tuple[float, float]:
    """Exponential min/max bounds with ``div_integral = sum dt ||div_h u||_inf``."""
    lo, hi = float(rho0.min()), float(rho0.max())
    if boundary is not None and boundary.tags.has_inflow():
        vals = np.concatenate([boundary.rho_B[s][boundary.tags.tags[s] == INFLOW] for s in boundary.tags.tags])
        lo, hi = min(lo, float(vals.min())), max(hi, float(vals.max()))
    return lo * np.exp(-div_integral), hi * np.exp(div_integral)


# ----------------------------------------------------------------------------- momentum


@dataclass
class MomentumAudit:
    """Time-integrated global momentum contributions of one step (vectors)."""

    realized: np.ndarray
    convective: np.ndarray
    pressure: np.ndarray
    viscous: np.ndarray
    quartic: np.ndarray
    eps_source: np.ndarray
    drag: np.ndarray
    source: np.ndarray

    @property
    def itemized(self) -> np.ndarray:
        return self.convective + self.pressure + self.viscous + self.quartic + self.eps_source + self.drag + self.source

    @property
    def residual(self) -> np.ndarray:
        return self.realized - self.itemized

    def as_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("realized", "convective", "pressure", "viscous", "quartic", "eps_source", "drag", "source")}


@dataclass
class MomentumInfo:
    audit: MomentumAudit
    admissible_dt: float
    fluxes: dict = field(default_factory=dict, repr=False)


def momentum_fluxes(grid, rho, m, u, phys, reg, boundary, mass_flux):
    """Per-axis face fluxes (component axis last) of each momentum term."""
    d = grid.dim
    nd = d + 1
    p = pressure(rho, phys, reg)
    c = sound_speed(rho, phys, reg)
    Gcell = cell_gradient(grid, u, boundary.u_B if grid.sides else None)
    w = u - boundary.u_inf
    zero_b = {s: np.zeros_like(v) for s, v in boundary.u_B.items()}
    Gw_cell = cell_gradient(grid, w, zero_b) if reg.eps > 0 else None
    out = {"convective": [], "pressure": [], "viscous": [], "quartic": []}
    for a in range(d):
        ua = u[..., a]
        flux_c = m * ua[..., None]
        lam = np.abs(ua) + c
        L = np.concatenate([flux_c[axis_slice(nd, a, slice(-1, None))], flux_c], axis=a)
        R = np.concatenate([flux_c, flux_c[axis_slice(nd, a, slice(0, 1))]], axis=a)
        mL = np.concatenate([m[axis_slice(nd, a, slice(-1, None))], m], axis=a)
        mR = np.concatenate([m, m[axis_slice(nd, a, slice(0, 1))]], axis=a)
        lL = np.concatenate([lam[axis_slice(d, a, slice(-1, None))], lam], axis=a)
        lR = np.concatenate([lam, lam[axis_slice(d, a, slice(0, 1))]], axis=a)
        lmax = np.maximum(lL, lR)[..., None]
        Fc = 0.5 * (L + R) - 0.5 * lmax * (mR - mL)
        pf = face_values(grid, a, p, p[axis_slice(d, a, slice(0, 1))], p[axis_slice(d, a, slice(-1, None))])
        Fp = np.zeros(pf.shape + (d,))
        Fp[..., a] = pf
        if not grid.periodic[a]:
            for s in (0, 1):
                face = axis_slice(nd, a, slice(0, 1) if s == 0 else slice(-1, None))
                Fc[face] = mass_flux[a][axis_slice(d, a, slice(0, 1) if s == 0 else slice(-1, None))][..., None] * boundary.u_B[(a, s)]
        Gf = face_gradient(grid, u, a, boundary.u_B, Gcell)
        Fv = -stress(Gf, phys)[..., :, a]
        if reg.eps > 0:
            Gwf = face_gradient(grid, w, a, zero_b, Gw_cell)
            Fq = -reg.eps * np.sum(Gwf**2, axis=(-2, -1))[..., None, None] * Gwf
            Fq = Fq[..., :, a]
        else:
            Fq = np.zeros_like(Fv)
        out["convective"].append(Fc)
        out["pressure"].append(Fp)
        out["viscous"].append(Fv)
        out["quartic"].append(Fq)
    return out, Gcell


def _boundary_sum(grid: SpatialGrid, F: np.ndarray, a: int, dt: float) -> np.ndarray:
    """Momentum entering through the two boundary faces of axis ``a`` over ``dt``."""
    d = grid.dim
    if grid.periodic[a]:
        return np.zeros(F.shape[-1])
    lo = F[axis_slice(d + 1, a, slice(0, 1))].reshape(-1, F.shape[-1]).sum(axis=0)
    hi = F[axis_slice(d + 1, a, slice(-1, None))].reshape(-1, F.shape[-1]).sum(axis=0)
    return (lo - hi) * grid.face_area(a) * dt


def momentum_step(
    grid: SpatialGrid,
    rho: np.ndarray,
    m: np.ndarray,
    rho_new: np.ndarray,
    dt: float,
    phys: PhysParams,
    reg: RegParams,
    boundary: BoundaryData,
    mass_flux: list[np.ndarray],
    n_star: np.ndarray | None = None,
    j_star: np.ndarray | None = None,
    chi: np.ndarray | None = None,
    source: np.ndarray | None = None,
    check_dt: bool = True,
) -> tuple[np.ndarray, MomentumInfo]:
    """Explicit momentum update with semi-implicit drag.

    ``mass_flux`` are the continuity fluxes of the same step (their boundary
    faces carry the momentum convected with ``u_B``). ``chi`` is the drag
    truncation indicator per cell (default all ones).
    """
    d = grid.dim
    u = velocity(rho, m)
    limit = admissible_dt(grid, rho, u, phys, reg, boundary)["dt"]
    if dt == 0:
        z = np.zeros(d)
        return m.copy(), MomentumInfo(MomentumAudit(z, z, z, z, z, z, z, z), limit)
    if check_dt and dt > limit * (1 + 1e-12):
        raise StepSizeError(f"momentum step exceeds the admissible dt {limit:.4g}", limit)
    fl, Gcell = momentum_fluxes(grid, rho, m, u, phys, reg, boundary, mass_flux)
    vol = grid.cell_volume
    rhs = m.copy()
    parts = {}
    for name, faces in fl.items():
        change = sum(np.diff(F, axis=a) / h for a, (F, h) in enumerate(zip(faces, grid.dx)))
        rhs = rhs - dt * change
        parts[name] = sum(_boundary_sum(grid, F, a, dt) for a, F in enumerate(faces))
    eps_term = np.zeros(d)
    if reg.eps > 0:
        grad_rho = cell_gradient(grid, rho, None)
        src = -reg.eps * np.einsum("...ic,...c->...i", Gcell, grad_rho)
        rhs = rhs + dt * src
        eps_term = dt * vol * src.reshape(-1, d).sum(axis=0)
    src_total = np.zeros(d)
    if source is not None:
        rhs = rhs + dt * source
        src_total = dt * vol * np.broadcast_to(source, m.shape).reshape(-1, d).sum(axis=0)
    drag = np.zeros(d)
    if n_star is not None:
        c = np.ones(grid.shape) if chi is None else chi.astype(float)
        safe = np.where(rho_new > 0, rho_new, np.inf)
        new = (rhs + dt * (c[..., None] * j_star)) / (1.0 + dt * c * n_star / safe)[..., None]
        u_new = velocity(rho_new, new)
        drag = dt * vol * (c[..., None] * (j_star - n_star[..., None] * u_new)).reshape(-1, d).sum(axis=0)
    else:
        new = rhs
    if not np.all(np.isfinite(new)):
        raise SchemeFailure("non-finite momentum after momentum step", dump={"rho": rho, "m": m})
    realized = vol * (new - m).reshape(-1, d).sum(axis=0)
    audit = MomentumAudit(realized, parts["convective"], parts["pressure"], parts["viscous"], parts["quartic"], eps_term, drag, src_total)
    return new, MomentumInfo(audit, limit, fl)


def admissible_dt(grid: SpatialGrid, rho, u, phys: PhysParams, reg: RegParams, boundary: BoundaryData) -> dict:
    """Stability limits of the explicit fluid terms; ``"dt"`` is the smallest."""
    c = sound_speed(rho, phys, reg)
    inv_h2 = sum(1.0 / h**2 for h in grid.dx)
    rmin = float(np.min(rho)) if rho.size else 1.0
    out = {}
    conv = sum(float(np.max(np.abs(u[..., a]) + c)) / h for a, h in enumerate(grid.dx))
    if reg.eps > 0:
        grad_rho = cell_gradient(grid, rho, None)
        conv += sum(reg.eps * float(np.max(np.abs(grad_rho[..., a]) / np.maximum(rho, 1e-300))) / h for a, h in enumerate(grid.dx))
    out["convective"] = 1.0 / conv if conv > 0 else np.inf
    nu = (phys.mu1 * (grid.dim + 1) + abs(phys.mu2)) / max(rmin, 1e-300)
    out["viscous"] = 1.0 / (nu * 2 * inv_h2) if nu > 0 else np.inf
    if reg.eps > 0:
        zero_b = {s: np.zeros_like(v) for s, v in boundary.u_B.items()}
        Gw = cell_gradient(grid, u - boundary.u_inf, zero_b)
        g2 = float(np.max(np.sum(Gw**2, axis=(-2, -1)))) if Gw.size else 0.0
        q = 3.0 * reg.eps * g2 / max(rmin, 1e-300)
        out["quartic"] = 1.0 / (q * 2 * inv_h2) if q > 0 else np.inf
    else:
        out["quartic"] = np.inf
    _, speeds = continuity_advective_flux(grid, rho, u, boundary)
    adv = sum(2.0 * float(np.max(np.abs(s))) / h for s, h in zip(speeds, grid.dx))
    out["continuity"] = 1.0 / adv if adv > 0 else np.inf
    out["dt"] = min(out.values())
    return out


@dataclass
class FluidStepInfo:
    continuity: ContinuityInfo
    momentum: MomentumInfo

    @property
    def drag(self) -> np.ndarray:
        return self.momentum.audit.drag


def fluid_step(
    grid: SpatialGrid,
    state: FluidField,
    dt: float,
    phys: PhysParams,
    reg: RegParams,
    boundary: BoundaryData,
    n_star: np.ndarray | None = None,
    j_star: np.ndarray | None = None,
    chi: np.ndarray | None = None,
    sources: tuple | None = None,
    check_dt: bool = True,
) -> tuple[FluidField, FluidStepInfo]:
    """Continuity then momentum, both driven by the old velocity.

    ``sources`` is an optional pair ``(S_rho, S_m)`` of cell arrays.
    """
    s_rho, s_m = sources if sources is not None else (None, None)
    u = state.u
    rho_new, cinfo = continuity_step(grid, state.rho, u, dt, reg.eps, boundary, s_rho)
    m_new, minfo = momentum_step(
        grid, state.rho, state.m, rho_new, dt, phys, reg, boundary, cinfo.advective_flux, n_star, j_star, chi, s_m, check_dt
    )
    return FluidField(rho_new, m_new), FluidStepInfo(cinfo, minfo)
