"""Itemized energy ledger.

Every term of the regularized energy inequality is evaluated as a discrete
functional: state terms at the report time, dissipation and work terms as
rectangle-rule time integrals over the committed end-of-step states, and the
phase-space energy influx from the fluxes the transport scheme recorded.
``slack = rhs - lhs``; the inequality holds when ``slack >= 0``.

The state, diffusion and boundary terms built on ``rho^2 / 2`` belong to the
eps-level model and are switched on only when ``eps > 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvariantViolation
from ..fluid import PhysParams, RegParams, cell_gradient, pressure, stress, stress_dissipation, velocity
from ..grid import INFLOW, OUTFLOW, BoundaryData, SpatialGrid, VelocityGrid, axis_slice, velocity_divergence
from ..kernel import kernel_dissipation

STATE_TERMS = ("fluid_kinetic", "internal", "artificial_internal", "rho_squared", "particle_kinetic")
LHS_RATE_TERMS = (
    "viscous_dissipation",
    "kernel_dissipation",
    "quartic_dissipation",
    "density_diffusion",
    "pressure_diffusion",
    "artificial_pressure_diffusion",
    "boundary_rho_squared",
    "inflow_pressure",
    "artificial_inflow_pressure",
    "outflow_pressure",
    "artificial_outflow_pressure",
    "inflow_rho_rhoB",
)
LHS_FLUX_TERMS = ("sigma_minus_energy",)
RHS_RATE_TERMS = (
    "work_rho_squared_div",
    "drag_u_inf",
    "particle_source",
    "work_pressure_div_u_inf",
    "work_artificial_pressure_div_u_inf",
    "work_stress_u_inf",
    "work_convective_u_inf",
    "work_eps_cross",
    "inflow_enthalpy",
    "artificial_inflow_enthalpy",
)
DISSIPATIONS = (
    "viscous_dissipation",
    "kernel_dissipation",
    "quartic_dissipation",
    "density_diffusion",
    "pressure_diffusion",
    "artificial_pressure_diffusion",
)
EPS_TERMS = ("quartic_dissipation", "density_diffusion", "pressure_diffusion", "artificial_pressure_diffusion", "work_eps_cross")
DELTA_TERMS = (
    "artificial_internal",
    "artificial_pressure_diffusion",
    "artificial_inflow_pressure",
    "artificial_outflow_pressure",
    "work_artificial_pressure_div_u_inf",
    "artificial_inflow_enthalpy",
)

LEDGER_COLUMNS = (
    ("t",)
    + STATE_TERMS
    + LHS_RATE_TERMS
    + LHS_FLUX_TERMS
    + ("initial_energy",)
    + RHS_RATE_TERMS
    + ("lhs", "rhs", "slack", "scale", "closure")
)


@dataclass
class LedgerContext:
    grid: SpatialGrid
    vgrid: VelocityGrid
    boundary: BoundaryData
    phys: PhysParams
    reg: RegParams
    kernel_matrix: np.ndarray
    k_max: float

    @classmethod
    def from_problem(cls, problem) -> "LedgerContext":
        return cls(problem.grid, problem.vgrid, problem.boundary, problem.phys, problem.reg, problem.kernel_matrix, problem.kernel.k_max)


def _boundary_rho(grid: SpatialGrid, rho: np.ndarray, side) -> np.ndarray:
    return rho[grid.boundary_cells(side)]


def state_terms(ctx: LedgerContext, f: np.ndarray, rho: np.ndarray, m: np.ndarray) -> dict:
    g, vg, reg, phys = ctx.grid, ctx.vgrid, ctx.reg, ctx.phys
    vol = g.cell_volume
    u = velocity(rho, m)
    w = u - ctx.boundary.u_inf
    out = {
        "fluid_kinetic": 0.5 * float((rho * np.sum(w**2, axis=-1)).sum()) * vol,
        "internal": float((rho**phys.gamma).sum()) * vol / (phys.gamma - 1),
        "artificial_internal": (reg.delta * float((rho**reg.beta_value).sum()) * vol / (reg.beta_value - 1)) if reg.delta > 0 else 0.0,
        "rho_squared": 0.5 * float((rho**2).sum()) * vol if reg.eps > 0 else 0.0,
        "particle_kinetic": 0.5 * float((f.reshape((-1,) + vg.shape).sum(axis=0) * vg.speed**2).sum()) * vol * vg.cell_volume,
    }
    return out


def rate_terms(ctx: LedgerContext, f: np.ndarray, rho: np.ndarray, m: np.ndarray, chi: np.ndarray | None = None) -> dict:
    """Integrands per unit time of the dissipation and work terms at one state."""
    g, vg, reg, phys, bd = ctx.grid, ctx.vgrid, ctx.reg, ctx.phys, ctx.boundary
    d = g.dim
    vol = g.cell_volume
    eps, delta, beta, gam = reg.eps, reg.delta, reg.beta_value, phys.gamma
    u = velocity(rho, m)
    w = u - bd.u_inf
    zero_b = {s: np.zeros_like(v) for s, v in bd.u_B.items()}
    Gw = cell_gradient(g, w, zero_b)
    Ginf = cell_gradient(g, bd.u_inf, bd.u_B)
    grad_rho = cell_gradient(g, rho, None)
    grad2 = np.sum(grad_rho**2, axis=-1)
    Gw2 = np.sum(Gw**2, axis=(-2, -1))
    vaxes = tuple(range(d, 2 * d))
    n = f.sum(axis=vaxes) * vg.cell_volume
    j = np.stack([(f * vg.mesh[..., a]).sum(axis=vaxes) for a in range(d)], axis=-1) * vg.cell_volume
    c = np.ones(g.shape) if chi is None else chi.astype(float)
    out = {k: 0.0 for k in LHS_RATE_TERMS + RHS_RATE_TERMS}
    out["viscous_dissipation"] = float(stress_dissipation(Gw, phys).sum()) * vol
    out["kernel_dissipation"] = kernel_dissipation(f, ctx.kernel_matrix, g, vg, ctx.k_max)
    out["quartic_dissipation"] = eps * float((Gw2**2).sum()) * vol
    out["pressure_diffusion"] = eps * float((gam * rho ** (gam - 2) * grad2).sum()) * vol
    art = delta > 0
    if art:
        out["artificial_pressure_diffusion"] = eps * float((delta * beta * rho ** (beta - 2) * grad2).sum()) * vol
    for side in g.sides:
        a = side[0]
        area = g.face_area(a)
        un = np.abs(bd.tags.normal_velocity[side])
        tag = bd.tags.tags[side]
        rb = _boundary_rho(g, rho, side)
        inflow, outflow = tag == INFLOW, tag == OUTFLOW
        rb_in = np.where(inflow, bd.rho_B[side], 0.0)
        out["inflow_pressure"] += float((np.where(inflow, rb**gam, 0.0) * un).sum()) * area
        out["outflow_pressure"] += float((np.where(outflow, rb**gam / (gam - 1), 0.0) * un).sum()) * area
        out["inflow_enthalpy"] += float((gam / (gam - 1) * rb ** (gam - 1) * rb_in * un).sum()) * area
        if art:
            out["artificial_inflow_pressure"] += float((np.where(inflow, delta * rb**beta, 0.0) * un).sum()) * area
            out["artificial_outflow_pressure"] += float((np.where(outflow, delta * rb**beta / (beta - 1), 0.0) * un).sum()) * area
            out["artificial_inflow_enthalpy"] += float((delta * beta / (beta - 1) * rb ** (beta - 1) * rb_in * un).sum()) * area
        if eps > 0:
            out["boundary_rho_squared"] += 0.5 * float((rb**2 * un).sum()) * area
            out["inflow_rho_rhoB"] -= float((rb * rb_in * un).sum()) * area
    if eps > 0:
        out["density_diffusion"] = eps * float(grad2.sum()) * vol
        div_u = velocity_divergence(g, u, bd.u_B)
        out["work_rho_squared_div"] = -0.5 * float((rho**2 * div_u).sum()) * vol
    U_N = c[..., None] * u
    out["drag_u_inf"] = -float(np.sum((j - n[..., None] * U_N) * bd.u_inf)) * vol
    out["particle_source"] = d * float(f.sum()) * vol * vg.cell_volume
    div_inf = velocity_divergence(g, bd.u_inf, bd.u_B)
    out["work_pressure_div_u_inf"] = -float((rho**gam * div_inf).sum()) * vol
    if art:
        out["work_artificial_pressure_div_u_inf"] = -float((delta * rho**beta * div_inf).sum()) * vol
    out["work_stress_u_inf"] = -float(np.sum(stress(Ginf, phys) * Gw)) * vol
    out["work_convective_u_inf"] = -float(np.einsum("...c,...ic,...i->...", rho[..., None] * u, Ginf, w).sum()) * vol
    if eps > 0:
        out["work_eps_cross"] = eps * float(np.einsum("...c,...ic,...i->...", grad_rho, Gw, bd.u_inf).sum()) * vol
    return out


def _scale(values: dict) -> float:
    return max(1e-300, sum(abs(v) for v in values.values()))


@dataclass
class EnergyLedger:
    """Online accumulator. Call :meth:`update` after every committed step."""

    ctx: LedgerContext
    initial: dict
    integrals: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    running_lhs: float = 0.0
    running_rhs: float = 0.0
    report_every: int = 1
    strict: bool = True

    @classmethod
    def start(cls, ctx: LedgerContext, state, report_every: int = 1, strict: bool = True) -> "EnergyLedger":
        init = state_terms(ctx, state.f, state.fluid.rho, state.fluid.m)
        led = cls(ctx, init, {k: 0.0 for k in LHS_RATE_TERMS + LHS_FLUX_TERMS + RHS_RATE_TERMS}, report_every=report_every, strict=strict)
        led.running_lhs = sum(init.values())
        led.running_rhs = sum(init.values())
        led.rows.append(led._row(0.0, init))
        return led

    def update(self, state, record) -> None:
        ctx = self.ctx
        chi = None
        if ctx.reg.N is not None and np.isfinite(ctx.reg.N):
            chi = np.linalg.norm(state.fluid.u, axis=-1) <= ctx.reg.N
        rates = rate_terms(ctx, state.f, state.fluid.rho, state.fluid.m, chi)
        scale = _scale(rates)
        for k in DISSIPATIONS:
            if rates[k] < -1e-12 * scale:
                raise InvariantViolation(f"dissipation term {k} is negative ({rates[k]:.3e})", {"term": k, "value": rates[k]})
        dt = record.dt
        for k in LHS_RATE_TERMS + RHS_RATE_TERMS:
            self.integrals[k] += dt * rates[k]
        influx = 0.5 * float(record.kinetic.flux.inflow[2])
        self.integrals["sigma_minus_energy"] += influx
        self.running_lhs += dt * sum(rates[k] for k in LHS_RATE_TERMS) + influx
        self.running_rhs += dt * sum(rates[k] for k in RHS_RATE_TERMS)
        if state.step % self.report_every == 0:
            st = state_terms(ctx, state.f, state.fluid.rho, state.fluid.m)
            self.rows.append(self._row(state.t, st))

    def __call__(self, state, record) -> None:
        self.update(state, record)

    def _row(self, t: float, st: dict) -> dict:
        row = {"t": t}
        row.update(st)
        row.update({k: self.integrals.get(k, 0.0) for k in LHS_RATE_TERMS + LHS_FLUX_TERMS})
        row["initial_energy"] = sum(self.initial.values())
        row.update({k: self.integrals.get(k, 0.0) for k in RHS_RATE_TERMS})
        lhs = sum(st.values()) + sum(row[k] for k in LHS_RATE_TERMS + LHS_FLUX_TERMS)
        rhs = row["initial_energy"] + sum(row[k] for k in RHS_RATE_TERMS)
        row["lhs"], row["rhs"], row["slack"] = lhs, rhs, rhs - lhs
        row["scale"] = max(1e-300, sum(abs(row[k]) for k in LEDGER_COLUMNS[1:-5]))
        # closure: itemized totals against the incrementally accumulated ones
        run_lhs = self.running_lhs - sum(self.initial.values()) + sum(st.values())
        row["closure"] = (lhs - run_lhs) - (rhs - self.running_rhs)
        if self.strict and abs(row["closure"]) > 1e-12 * row["scale"]:
            raise InvariantViolation(f"energy ledger does not close at t={t:g}: {row['closure']:.3e}", {"row": row})
        return row

    @property
    def final(self) -> dict:
        return self.rows[-1]

    def min_slack(self) -> float:
        return min(r["slack"] for r in self.rows)

    def columns(self) -> tuple[str, ...]:
        return LEDGER_COLUMNS


def replay_ledger(problem, snapshots, records, report_every: int = 1) -> EnergyLedger:
    """Rebuild the ledger from stored per-step snapshots (``snapshots[k+1]`` follows ``records[k]``)."""
    if len(snapshots) != len(records) + 1:
        raise ValueError("ledger replay needs the initial snapshot plus one snapshot per step")
    led = EnergyLedger.start(LedgerContext.from_problem(problem), snapshots[0], report_every)
    for st, rec in zip(snapshots[1:], records):
        led.update(st, rec)
    return led


def fit_tolerance(hs, negative_slacks) -> dict:
    """Calibrate ``tol_E`` from a refinement family of negative-slack magnitudes.

    Returns the fitted constant ``C_E`` (``tol_E = C_E * h``), the observed
    orders between consecutive levels, and whether the criterion holds: either
    no level has negative slack, or the negative part decays at order >= 1.
    """
    hs = np.asarray(hs, dtype=float)
    neg = np.maximum(np.asarray(negative_slacks, dtype=float), 0.0)
    c_e = float(np.max(neg / hs)) if neg.size else 0.0
    if np.all(neg == 0):
        return {"C_E": 0.0, "orders": [], "pass": True}
    orders = [float(np.log(neg[i] / neg[i + 1]) / np.log(hs[i] / hs[i + 1])) if neg[i + 1] > 0 else np.inf for i in range(len(hs) - 1)]
    return {"C_E": c_e, "orders": orders, "pass": all(o >= 1.0 for o in orders)}
