"""Scenario execution: config -> problem, invariant monitoring, artifacts, sweeps."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, validate
from .coupling import CoupledState, Problem, RunResult, run
from .diagnostics.flocking import flocking_metrics
from .diagnostics.ledger import DELTA_TERMS, EPS_TERMS, LEDGER_COLUMNS, EnergyLedger, LedgerContext, state_terms
from .errors import ConfigError, CSNSError, InvariantViolation, NumericalError
from .fluid import FluidField, PhysParams, RegParams, density_bounds
from .grid import build_grids, make_boundary
from .io import MANIFEST_VERSION, git_describe, write_csv, write_json, write_snapshot
from .kernel import make_kernel
from .kinetic import compute_momentset, linf_bound, maxwellian
from .parallel import get_threads

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
MASS_TOL = 1e-12
FLUID_MASS_TOL = 1e-11
DRAG_TOL = 1e-11


# ----------------------------------------------------------------------------- config -> problem


def _maxwellian_trace(density: float, mean, temperature: float, dim: int):
    w = np.zeros(dim) if mean is None else np.asarray(mean, dtype=float)
    if w.shape != (dim,):
        raise ConfigError(f"boundary.g.mean must have {dim} components")
    norm = density * (2 * np.pi * temperature) ** (-0.5 * dim)

    def g(t, x, v, side):
        return norm * np.exp(-0.5 * np.sum((v - w) ** 2, axis=-1) / temperature)

    return g, norm


def _vector(value, dim: int, label: str) -> np.ndarray:
    if value is None:
        return np.zeros(dim)
    vec = np.asarray(value, dtype=float)
    if vec.shape != (dim,):
        raise ConfigError(f"{label} must have {dim} components, got {list(value)}")
    return vec


def initial_fluid(cfg: RunConfig, grid) -> FluidField:
    fi = cfg.initial.fluid
    d = grid.dim
    X = grid.mesh
    if fi.profile == "uniform":
        rho = np.full(grid.shape, fi.rho)
        u = np.broadcast_to(_vector(fi.u, d, "initial.fluid.u"), grid.shape + (d,)).copy()
    elif fi.profile == "riemann":
        left = X[..., 0] < fi.x0
        rho = np.where(left, fi.rho_left, fi.rho_right)
        uL = _vector(fi.u_left, d, "initial.fluid.u_left")
        uR = _vector(fi.u_right, d, "initial.fluid.u_right")
        u = np.where(left[..., None], uL, uR)
    elif fi.profile == "sine":
        phase = sum(np.sin(2 * np.pi * (X[..., a] - grid.lower[a]) / grid.extents[a]) for a in range(d)) / d
        rho = fi.rho * (1.0 + fi.amplitude * phase)
        u = np.broadcast_to(_vector(fi.u, d, "initial.fluid.u"), grid.shape + (d,)).copy()
    else:  # random
        rng = np.random.default_rng(fi.seed)
        rho = fi.rho * (1.0 + fi.amplitude * rng.uniform(-1.0, 1.0, grid.shape))
        u = fi.amplitude * rng.standard_normal(grid.shape + (d,))
    if not np.all(rho > 0):
        raise ConfigError("initial.fluid: density must be positive everywhere")
    return FluidField(rho, rho[..., None] * u)


def initial_kinetic(cfg: RunConfig, grid, vgrid) -> np.ndarray:
    ki = cfg.initial.kinetic
    d = grid.dim
    shape = grid.shape + vgrid.shape
    if ki.profile == "zero":
        return np.zeros(shape)
    if ki.profile == "maxwellian":
        mean = _vector(ki.mean, d, "initial.kinetic.mean")
        return maxwellian(vgrid, np.full(grid.shape, ki.density), mean, ki.temperature)
    if ki.profile == "bimodal":
        e = np.zeros(d)
        e[0] = ki.speed
        half = np.full(grid.shape, 0.5 * ki.density)
        return maxwellian(vgrid, half, e, ki.temperature) + maxwellian(vgrid, half, -e, ki.temperature)
    rng = np.random.default_rng(ki.seed)
    base = maxwellian(vgrid, np.full(grid.shape, ki.density), _vector(ki.mean, d, "initial.kinetic.mean"), ki.temperature)
    return base * rng.uniform(0.0, 2.0, shape)


def build_problem(cfg: RunConfig) -> tuple[Problem, CoupledState]:
    """Grids, boundary data, kernel, parameters and initial state of a validated config."""
    reg_block = cfg.regularization
    grid, vgrid = build_grids(cfg.domain.extents, cfg.grid.cells, reg_block.v_max, cfg.grid.v_cells, cfg.domain.periodic)
    d = grid.dim
    bc = cfg.boundary
    g, g_sup = None, 0.0
    if bc.g.kind == "maxwellian":
        g, g_sup = _maxwellian_trace(bc.g.density, bc.g.mean, bc.g.temperature, d)
    boundary = make_boundary(grid, bc.u_B, bc.rho_B, bc.h, g, g_sup)
    kb = cfg.kernel
    params = {"strength": kb.strength, "boundary_vanishing": kb.boundary_vanishing}
    if kb.width is not None:
        params["width"] = kb.width
    kernel = make_kernel(kb.family, **params) if kb.family != "zero" else make_kernel("zero")
    phys = PhysParams(cfg.physics.gamma, cfg.physics.mu1, cfg.physics.mu2)
    reg = RegParams(reg_block.eps, reg_block.delta, reg_block.beta, reg_block.N)
    cp = cfg.coupling
    problem = Problem(
        grid,
        vgrid,
        boundary,
        kernel,
        phys,
        reg,
        kappa0=reg_block.kappa0,
        implicit_velocity=cp.implicit_velocity,
        fluid_mode=cp.fluid_mode,
        tol=cp.tol,
        max_iter=cp.max_iter,
        damping=cp.damping,
        retry_damping=cp.retry_damping,
        max_retries=cp.max_retries,
    )
    state = CoupledState(initial_kinetic(cfg, grid, vgrid), initial_fluid(cfg, grid))
    return problem, state


# ----------------------------------------------------------------------------- invariant monitor


@dataclass
class CheckStatus:
    enabled: bool
    passed: bool = True
    worst: float = 0.0  # worst ratio value / bound seen (<= 1 passes)
    detail: str = ""

    def as_dict(self) -> dict:
        return {"enabled": self.enabled, "passed": self.passed, "worst": self.worst, "detail": self.detail}


class InvariantMonitor:
    """Observer asserting the per-step invariants enabled in the ``checks`` block.

    Failures are collected rather than raised, so a run always completes and
    reports every violated invariant.
    """

    def __init__(self, problem: Problem, cfg: RunConfig, state0: CoupledState):
        self.p = problem
        ch = cfg.checks
        self.coupled = problem.fluid_mode == "coupled"
        eps_level = problem.reg.eps > 0
        self.status = {
            "mass_balance": CheckStatus(ch.mass_balance),
            "positivity": CheckStatus(ch.positivity),
            "linf": CheckStatus(ch.linf),
            "density_bounds": CheckStatus(ch.density_bounds and eps_level and self.coupled),
            "drag": CheckStatus(ch.drag and self.coupled),
            "energy": CheckStatus(ch.energy),
            "steady": CheckStatus(ch.steady is not None),
            "variance_monotone": CheckStatus(ch.variance_monotone),
        }
        if ch.density_bounds and not self.status["density_bounds"].enabled:
            self.status["density_bounds"].detail = "skipped: bounds are asserted at the eps-level with a coupled fluid"
        self.failures: list[dict] = []
        self.state0 = state0.copy()
        self.f0_max = float(state0.f.max(initial=0.0))
        self.g_sup = problem.boundary.g_sup
        self.sup_q = float(np.max(problem.moments(state0.f).q, initial=0.0))
        self.div_integral = 0.0
        self.rho0 = state0.fluid.rho.copy()
        self.max_u = float(np.max(np.linalg.norm(state0.fluid.u, axis=-1), initial=0.0))
        self.prev_variance = self._variance(state0.f)
        self.steady_tol = ch.steady
        self.mass_defect = 0.0

    def _variance(self, f):
        M = float(f.sum())
        if not M > 0:
            return None
        return flocking_metrics(f, self.p.grid, self.p.vgrid).variance

    def _fail(self, name: str, state, value: float, bound: float, message: str) -> None:
        st = self.status[name]
        st.passed = False
        if len(self.failures) < 50:
            self.failures.append({"check": name, "step": state.step, "t": state.t, "value": value, "bound": bound, "message": message})

    def _ratio(self, name: str, value: float, bound: float) -> None:
        st = self.status[name]
        r = value / bound if bound > 0 else (0.0 if value == 0 else math.inf)
        st.worst = max(st.worst, r)

    def __call__(self, state, record) -> None:
        p, s = self.p, self.status
        grid, vgrid = p.grid, p.vgrid
        w = grid.cell_volume * vgrid.cell_volume
        kin = record.kinetic
        self.max_u = max(self.max_u, float(np.max(np.linalg.norm(state.fluid.u, axis=-1), initial=0.0)))
        if s["mass_balance"].enabled:
            M1 = float(state.f.sum()) * w
            M0 = M1 - record.kinetic_mass_change
            defect = abs(record.kinetic_mass_change + float(kin.flux.net[0]))
            bound = MASS_TOL * max(M0, M1, 1e-300)
            self._ratio("mass_balance", defect, bound)
            if defect > bound:
                self._fail("mass_balance", state, defect, bound, "kinetic mass change differs from the phase-boundary flux")
            if record.fluid is not None:
                bflux = record.fluid.continuity.boundary_mass_flux
                fdefect = abs(record.fluid_mass_change + bflux)
                fbound = FLUID_MASS_TOL * max(state.fluid.mass(grid), abs(bflux), 1e-300)
                self._ratio("mass_balance", fdefect, fbound)
                if fdefect > fbound:
                    self._fail("mass_balance", state, fdefect, fbound, "fluid mass change differs from the boundary mass flux")
        if s["positivity"].enabled:
            fmin = float(state.f.min(initial=0.0))
            if fmin < 0:
                self._fail("positivity", state, fmin, 0.0, "negative distribution value")
            rmin = float(state.fluid.rho.min())
            if (p.reg.eps > 0 and not rmin > 0) or rmin < 0:
                self._fail("positivity", state, rmin, 0.0, "non-positive density")
        self.sup_q = max(self.sup_q, float(np.max(kin.moments.q, initial=0.0)), float(np.max(record.moments.q, initial=0.0)))
        self.g_sup = max(self.g_sup, kin.flux.g_max)
        if s["linf"].enabled:
            fmax = float(state.f.max(initial=0.0))
            bound = linf_bound(self.f0_max, self.g_sup, self.sup_q, state.t, grid.dim)
            self._ratio("linf", fmax, bound)
            if fmax > bound * (1 + 1e-12):
                self._fail("linf", state, fmax, bound, "L-infinity principle violated")
        if record.fluid is not None:
            self.div_integral += record.dt * float(np.max(np.abs(record.fluid.continuity.div_u), initial=0.0))
        if s["density_bounds"].enabled:
            lo, hi = density_bounds(self.rho0, p.boundary, self.div_integral)
            rho = state.fluid.rho
            rlo, rhi = float(rho.min()), float(rho.max())
            self._ratio("density_bounds", max(lo / rlo, rhi / hi), 1.0)
            if rlo < lo * (1 - 1e-12) or rhi > hi * (1 + 1e-12):
                self._fail("density_bounds", state, rlo if rlo < lo else rhi, lo if rlo < lo else hi, "density outside the exponential bounds")
        if s["drag"].enabled and record.fluid is not None:
            vol = grid.cell_volume
            # momentum magnitudes entering the exchange: |n U_N| and the absolute particle momentum
            j_abs = float((state.f.reshape(grid.shape + (-1,)) * vgrid.speed.ravel()).sum()) * vgrid.cell_volume
            scale = record.dt * vol * (float(np.abs(kin.n_star[..., None] * kin.U_N).sum()) + j_abs)
            mis = float(np.max(np.abs(record.drag_mismatch), initial=0.0))
            bound = DRAG_TOL * max(scale, 1e-300)
            self._ratio("drag", mis, bound)
            if mis > bound:
                self._fail("drag", state, mis, bound, "fluid and kinetic drag exchanges do not cancel")
        if s["variance_monotone"].enabled:
            var = self._variance(state.f)
            if var is not None and self.prev_variance is not None:
                if var > self.prev_variance * (1 + 1e-12):
                    self._fail("variance_monotone", state, var, self.prev_variance, "velocity variance increased")
            self.prev_variance = var

    def finish(self, state, ledger: EnergyLedger | None, h: float) -> None:
        s = self.status
        if s["steady"].enabled:
            s0 = self.state0
            M0 = max(float(s0.f.sum()) * self.p.grid.cell_volume * self.p.vgrid.cell_volume, 1e-300)
            l1 = float(np.abs(state.f - s0.f).sum()) * self.p.grid.cell_volume * self.p.vgrid.cell_volume / M0
            drho = float(np.max(np.abs(state.fluid.rho - s0.fluid.rho))) / float(np.max(s0.fluid.rho))
            dm = float(np.max(np.abs(state.fluid.m - s0.fluid.m), initial=0.0)) / max(1.0, float(np.max(np.abs(s0.fluid.m), initial=0.0)))
            dev = max(l1, drho, dm)
            s["steady"].worst = dev / self.steady_tol
            s["steady"].detail = f"relative deviation {dev:.3e}"
            if dev > self.steady_tol:
                self._fail("steady", state, dev, self.steady_tol, "state drifted from the initial equilibrium")
        if s["energy"].enabled and ledger is not None:
            worst = min(ledger.rows, key=lambda r: r["slack"])
            tol = self.energy_constant * h * worst["scale"]
            s["energy"].detail = f"min slack {worst['slack']:.3e} at t={worst['t']:g}, tol_E {tol:.3e}"
            if worst["slack"] < 0:
                s["energy"].worst = -worst["slack"] / tol if tol > 0 else math.inf
            if worst["slack"] < -tol:
                self._fail("energy", state, worst["slack"], -tol, "energy inequality slack below -tol_E")

    energy_constant: float = 1.0

    @property
    def passed(self) -> bool:
        return all(st.passed for st in self.status.values() if st.enabled)


# ----------------------------------------------------------------------------- scenario execution


@dataclass
class ScenarioOutcome:
    exit_code: int
    summary: dict
    result: RunResult | None = None
    ledger: EnergyLedger | None = None
    problem: Problem | None = None
    output_dir: Path | None = None
    monitor: InvariantMonitor | None = None


def refinement_scale(problem: Problem, dt: float) -> float:
    """``dt + dx + dv`` with the largest spacings, the step used in ``tol_E``."""
    return dt + max(problem.grid.dx) + max(problem.vgrid.dv)


def moment_row(problem: Problem, state: CoupledState) -> dict:
    ms = compute_momentset(state.f, problem.grid, problem.vgrid, problem.kappa0)
    row = {"step": state.step, "t": state.t, "kinetic_mass": ms.mass, "fluid_mass": state.fluid.mass(problem.grid)}
    for k, val in enumerate(ms.m[: problem.kappa0 + 1]):
        row[f"m_{k}"] = float(val)
    row["max_f"] = float(state.f.max(initial=0.0))
    row["min_rho"] = float(state.fluid.rho.min())
    row["max_speed_u"] = float(np.max(np.linalg.norm(state.fluid.u, axis=-1), initial=0.0))
    if ms.mass > 0:
        fm = flocking_metrics(state.f, problem.grid, problem.vgrid)
        for a, val in enumerate(fm.mean_velocity):
            row[f"mean_v_{a}"] = float(val)
        row["variance"] = fm.variance
        row["momentum_spread"] = fm.momentum_spread
    return row


def moment_columns(problem: Problem) -> list[str]:
    cols = ["step", "t", "kinetic_mass", "fluid_mass"] + [f"m_{k}" for k in range(problem.kappa0 + 1)]
    cols += ["max_f", "min_rho", "max_speed_u"] + [f"mean_v_{a}" for a in range(problem.grid.dim)] + ["variance", "momentum_spread"]
    return cols


STEP_COLUMNS = [
    "step", "t", "dt", "iterations", "dE", "dq", "du", "damping",
    "kinetic_mass_change", "kinetic_boundary_flux", "fluid_mass_change", "fluid_boundary_flux", "drag_mismatch",
]


def step_row(step: int, rec) -> dict:
    rep = rec.report
    return {
        "step": step,
        "t": rec.t,
        "dt": rec.dt,
        "iterations": rep.iterations,
        "dE": rep.dE[-1],
        "dq": rep.dq[-1],
        "du": rep.du[-1],
        "damping": rep.damping,
        "kinetic_mass_change": rec.kinetic_mass_change,
        "kinetic_boundary_flux": float(rec.kinetic.flux.net[0]),
        "fluid_mass_change": rec.fluid_mass_change,
        "fluid_boundary_flux": rec.fluid.continuity.boundary_mass_flux if rec.fluid is not None else 0.0,
        "drag_mismatch": float(np.max(np.abs(rec.drag_mismatch), initial=0.0)),
    }


def manifest(cfg: RunConfig) -> dict:
    return {
        "manifest_version": MANIFEST_VERSION,
        "name": cfg.name,
        "package_version": __version__,
        "git_describe": git_describe(),
        "config": cfg.as_dict(),
    }


def run_scenario(cfg: RunConfig, output_dir: str | Path | None = None) -> ScenarioOutcome:
    """Run one scenario (or its sweep, if the config has a schedule) and write its artifacts."""
    if cfg.sweep.schedule():
        return continuation_sweep(cfg, output_dir=output_dir)
    out = Path(output_dir) if output_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "manifest.json", manifest(cfg))
    summary = {"name": cfg.name, "threads": get_threads()}
    try:
        problem, state0 = build_problem(cfg)
    except ConfigError as err:
        summary.update(status="config-error", exit_code=EXIT_CONFIG, error=str(err))
        return _finish(out, ScenarioOutcome(EXIT_CONFIG, summary))
    monitor = InvariantMonitor(problem, cfg, state0)
    monitor.energy_constant = cfg.checks.energy_constant
    ledger = EnergyLedger.start(LedgerContext.from_problem(problem), state0, cfg.time.report_every) if cfg.output.ledger or cfg.checks.energy else None
    snap_dir = out / "snapshots" if (out is not None and cfg.output.snapshots) else None
    moments, steps = [moment_row(problem, state0)], []
    if snap_dir is not None:
        write_snapshot(snap_dir, state0, problem.grid, problem.vgrid)

    def recorder(state, rec):
        steps.append(step_row(state.step, rec))
        if state.step % cfg.time.report_every == 0:
            moments.append(moment_row(problem, state))
            if snap_dir is not None:
                write_snapshot(snap_dir, state, problem.grid, problem.vgrid)

    observers = [monitor] + ([ledger] if ledger is not None else []) + [recorder]
    tb = cfg.time
    outcome = ScenarioOutcome(EXIT_OK, summary, problem=problem, ledger=ledger, output_dir=out, monitor=monitor)
    try:
        result = run(problem, state0, tb.T, dt=tb.dt, cfl=None if tb.dt is not None else tb.cfl, report_every=tb.report_every, observers=observers)
    except InvariantViolation as err:
        summary.update(status="invariant-failure", exit_code=EXIT_INVARIANT, error=str(err))
        outcome.exit_code = EXIT_INVARIANT
        return _finish(out, outcome, moments, steps, problem)
    except NumericalError as err:
        summary.update(status="numerical-failure", exit_code=EXIT_NUMERICAL, error=f"{type(err).__name__}: {err}")
        outcome.exit_code = EXIT_NUMERICAL
        return _finish(out, outcome, moments, steps, problem)
    except CSNSError as err:
        summary.update(status="config-error", exit_code=EXIT_CONFIG, error=str(err))
        outcome.exit_code = EXIT_CONFIG
        return _finish(out, outcome, moments, steps, problem)
    result.ledger = ledger
    outcome.result = result
    if result.state.step % tb.report_every != 0:
        moments.append(moment_row(problem, result.state))
        if ledger is not None:
            ledger.rows.append(ledger._row(result.state.t, state_terms(ledger.ctx, result.state.f, result.state.fluid.rho, result.state.fluid.m)))
        if snap_dir is not None:
            write_snapshot(snap_dir, result.state, problem.grid, problem.vgrid)
    dt_max = max((r.dt for r in result.records), default=0.0)
    monitor.finish(result.state, ledger, refinement_scale(problem, dt_max))
    outcome.exit_code = EXIT_OK if monitor.passed else EXIT_INVARIANT
    summary.update(
        status="pass" if monitor.passed else "invariant-failure",
        exit_code=outcome.exit_code,
        steps=result.state.step,
        t_final=result.state.t,
        max_speed_u=monitor.max_u,
        picard_iterations_max=max((r.report.iterations for r in result.records), default=0),
    )
    if ledger is not None:
        summary["ledger_final"] = {k: ledger.final[k] for k in ("lhs", "rhs", "slack", "scale")}
        summary["ledger_min_slack"] = ledger.min_slack()
    return _finish(out, outcome, moments, steps, problem)


def _finish(out, outcome: ScenarioOutcome, moments=None, steps=None, problem=None) -> ScenarioOutcome:
    if outcome.monitor is not None:
        outcome.summary["checks"] = {k: v.as_dict() for k, v in outcome.monitor.status.items()}
        outcome.summary["failures"] = outcome.monitor.failures
    if out is not None:
        if moments is not None and problem is not None:
            write_csv(out / "moments.csv", moment_columns(problem), moments)
        if steps is not None:
            write_csv(out / "steps.csv", STEP_COLUMNS, steps)
        if outcome.ledger is not None:
            write_csv(out / "ledger.csv", LEDGER_COLUMNS, outcome.ledger.rows)
        write_json(out / "summary.json", outcome.summary)
    return outcome


# ----------------------------------------------------------------------------- continuation sweeps

SWEEP_PARAMETERS = ("eps", "delta", "N", "v_max")


def _param_value(v) -> float:
    if v is None or (isinstance(v, str) and v.lower() in ("inf", "infinity", "none")):
        return math.inf
    return float(v)


def check_schedule(schedule: list[dict]) -> None:
    """Each parameter appearing in the schedule must be monotone along it."""
    for key in SWEEP_PARAMETERS:
        vals = [_param_value(leg[key]) for leg in schedule if key in leg]
        if len(vals) < 2:
            continue
        diffs = np.diff(vals)
        if not (np.all(diffs >= 0) or np.all(diffs <= 0)):
            raise ConfigError(f"sweep schedule is not monotone in {key}: {vals}")


def leg_config(cfg: RunConfig, leg: dict, index: int) -> RunConfig:
    raw = copy.deepcopy(cfg.as_dict())
    raw["sweep"] = {}
    raw["name"] = f"{cfg.name}/leg{index}"
    for key, val in leg.items():
        raw["regularization"][key] = val
    return validate(raw)


SWEEP_COLUMNS = (
    ["leg", "eps", "delta", "N", "v_max", "status", "exit_code", "min_slack", "max_speed_u", "diff_rho", "diff_m", "diff_n"]
    + list(EPS_TERMS)
    + [t for t in DELTA_TERMS if t not in EPS_TERMS]
    + ["eps_terms_zero", "delta_terms_zero", "saturated"]
)


def _final_n(problem, state):
    d = problem.grid.dim
    return state.f.sum(axis=tuple(range(d, 2 * d))) * problem.vgrid.cell_volume


def continuation_sweep(cfg: RunConfig, schedule: list[dict] | None = None, output_dir: str | Path | None = None) -> ScenarioOutcome:
    """Re-run the scenario along a regularization schedule and tabulate the ledger terms.

    A failing leg is marked in the table and the sweep continues. The sweep
    passes when every leg passes and the sweep-level properties hold:
    eps- (delta-) terms shrink monotonically with eps (delta) and vanish at 0,
    and legs with ``N`` at or above the realized ``max |u|`` of the untruncated
    leg reproduce it bitwise.
    """
    schedule = cfg.sweep.schedule() if schedule is None else schedule
    if not schedule:
        raise ConfigError("sweep: empty schedule (set sweep.parameter and sweep.values, or sweep.legs)")
    check_schedule(schedule)
    out = Path(output_dir) if output_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "manifest.json", manifest(cfg))
    rows, legs = [], []
    prev = None
    for i, leg in enumerate(schedule):
        lcfg = leg_config(cfg, leg, i)
        oc = run_scenario(lcfg, out / f"leg{i}" if out is not None else None)
        reg = lcfg.regularization
        row = {"leg": i, "eps": reg.eps, "delta": reg.delta, "N": "inf" if reg.N is None else reg.N, "v_max": reg.v_max,
               "status": oc.summary.get("status"), "exit_code": oc.exit_code}
        if oc.result is not None:
            st = oc.result.state
            fin = oc.ledger.final
            row["min_slack"] = oc.ledger.min_slack()
            row["max_speed_u"] = oc.summary.get("max_speed_u")
            for t in set(EPS_TERMS) | set(DELTA_TERMS):
                row[t] = fin[t]
            row["eps_terms_zero"] = all(fin[t] == 0.0 for t in EPS_TERMS)
            row["delta_terms_zero"] = all(fin[t] == 0.0 for t in DELTA_TERMS)
            if prev is not None and prev[0].result is not None:
                pst = prev[0].result.state
                row["diff_rho"] = float(np.max(np.abs(st.fluid.rho - pst.fluid.rho)))
                row["diff_m"] = float(np.max(np.abs(st.fluid.m - pst.fluid.m)))
                row["diff_n"] = float(np.max(np.abs(_final_n(oc.problem, st) - _final_n(prev[0].problem, pst))))
        rows.append(row)
        legs.append(oc)
        prev = (oc, row)
    findings = _sweep_findings(cfg.sweep.parameter, schedule, rows, legs)
    ok_legs = all(oc.exit_code == EXIT_OK for oc in legs)
    codes = [oc.exit_code for oc in legs]
    code = EXIT_OK if ok_legs and not findings else (EXIT_NUMERICAL if EXIT_NUMERICAL in codes else EXIT_INVARIANT)
    summary = {"name": cfg.name, "status": "pass" if code == EXIT_OK else "fail", "exit_code": code, "threads": get_threads(),
               "legs": [{"leg": r["leg"], "status": r["status"], "exit_code": r["exit_code"]} for r in rows], "failures": findings}
    if out is not None:
        write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
        write_json(out / "summary.json", summary)
    oc = ScenarioOutcome(code, summary, output_dir=out)
    oc.sweep_rows = rows  # type: ignore[attr-defined]
    oc.legs = legs  # type: ignore[attr-defined]
    return oc


def _monotone_findings(rows, key, terms, label) -> list[dict]:
    found = []
    good = [r for r in rows if r.get("exit_code") == EXIT_OK]
    for r in good:
        if r[key] == 0 and not r[f"{label}_terms_zero"]:
            found.append({"check": f"{label}_terms_vanish", "leg": r["leg"], "message": f"{label}-terms nonzero at {key}=0"})
    order = sorted(good, key=lambda r: -r[key])
    for t in terms:
        mags = [abs(r[t]) for r in order]
        for a, b, ra in zip(mags, mags[1:], order[1:]):
            if b > a:
                found.append({"check": f"{label}_monotone", "leg": ra["leg"], "term": t, "message": f"|{t}| grew from {a:.3e} to {b:.3e} as {key} decreased"})
    return found


def _sweep_findings(parameter, schedule, rows, legs) -> list[dict]:
    keys = {k for leg in schedule for k in leg}
    found = []
    if "eps" in keys:
        found += _monotone_findings(rows, "eps", EPS_TERMS, "eps")
    if "delta" in keys:
        found += _monotone_findings(rows, "delta", DELTA_TERMS, "delta")
    if "N" in keys:
        ref = [(r, oc) for r, oc in zip(rows, legs) if r["N"] == "inf" and oc.result is not None]
        if not ref:
            ref = sorted(((r, oc) for r, oc in zip(rows, legs) if oc.result is not None), key=lambda p: _param_value(p[0]["N"]))[-1:]
        if ref:
            rrow, roc = ref[-1]
            umax = roc.summary["max_speed_u"]
            rs = roc.result.state
            for r, oc in zip(rows, legs):
                if oc.result is None or _param_value(r["N"]) < umax:
                    r["saturated"] = False
                    continue
                st = oc.result.state
                same = np.array_equal(st.f, rs.f) and np.array_equal(st.fluid.rho, rs.fluid.rho) and np.array_equal(st.fluid.m, rs.fluid.m)
                r["saturated"] = same
                if not same:
                    found.append({"check": "N_saturation", "leg": r["leg"], "message": f"N={r['N']} >= max|u|={umax:.3e} but results differ from the untruncated leg"})
    return found


# ----------------------------------------------------------------------------- stored-trajectory checks


def check_run(directory: str | Path) -> ScenarioOutcome:
    """Re-run the diagnostics on a stored trajectory directory.

    Checks positivity and both moment-interpolation bounds on every snapshot,
    that the stored masses match the moments table, and tabulates the
    weak-form residuals over the stored snapshots in ``residuals.csv``.
    """
    from .config import read_raw
    from .diagnostics.lemma import lemma_moment_bound
    from .diagnostics.weakform import weakform_residual
    from .io import list_snapshots, read_csv, read_snapshot

    d = Path(directory)
    cfg = validate(read_raw(d / "manifest.json"))
    problem, _ = build_problem(cfg)
    paths = list_snapshots(d / "snapshots")
    if not paths:
        raise ConfigError(f"{d}: no snapshots stored (output.snapshots was off)")
    snaps = [read_snapshot(p) for p in paths]
    rows = {int(r["step"]): r for r in read_csv(d / "moments.csv")} if (d / "moments.csv").exists() else {}
    checks = {"positivity": True, "lemma_n": True, "lemma_j": True, "stored_moments": True}
    failures = []
    grid, vgrid = problem.grid, problem.vgrid
    for st in snaps:
        if st.f.min(initial=0.0) < 0 or st.fluid.rho.min() < 0:
            checks["positivity"] = False
            failures.append({"check": "positivity", "step": st.step})
        for which in ("n", "j"):
            res = lemma_moment_bound(st.f, grid, vgrid, problem.kappa0, which=which)
            if not res.passed:
                checks[f"lemma_{which}"] = False
                failures.append({"check": f"lemma_{which}", "step": st.step, "lhs": res.lhs, "rhs": res.rhs})
        if st.step in rows:
            ref = moment_row(problem, st)
            for key in ("kinetic_mass", "fluid_mass"):
                if repr(ref[key]) != rows[st.step][key]:
                    checks["stored_moments"] = False
                    failures.append({"check": "stored_moments", "step": st.step, "column": key})
    residual_rows = []
    if len(snaps) >= 2 and snaps[-1].t > 0:
        table = weakform_residual(problem, snaps)
        for form, vals in table.items():
            for i, v in enumerate(np.atleast_1d(vals.reshape(len(vals), -1))):
                for c, x in enumerate(np.atleast_1d(v)):
                    residual_rows.append({"form": form, "test": i, "component": c, "residual": float(x)})
        write_csv(d / "residuals.csv", ["form", "test", "component", "residual"], residual_rows)
    code = EXIT_OK if all(checks.values()) else EXIT_INVARIANT
    summary = {"name": cfg.name, "status": "pass" if code == EXIT_OK else "fail", "exit_code": code, "snapshots": len(snaps),
               "checks": checks, "failures": failures[:50],
               "max_abs_residual": max((abs(r["residual"]) for r in residual_rows), default=0.0)}
    write_json(d / "check.json", summary)
    return ScenarioOutcome(code, summary, output_dir=d)
