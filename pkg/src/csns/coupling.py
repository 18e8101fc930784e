"""Coupled time loop with a per-step Picard iteration on ``(E, q, u)``.

One sweep of the iteration, given the iterate ``(E, q, u~)``:

1. advance ``f`` by a kinetic step driven by ``u~`` and ``(E, q)``;
2. recompute ``(E, q)`` from the new ``f``;
3. advance the fluid with the drag moments of the new ``f``, giving ``u``.

The sweep repeats until the changes of all three fields fall below the
tolerance; the last sweep's states are committed. A step that does not
converge is retried as two half steps with a damped iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import ConvergenceError, StepSizeError
from .fluid import FluidField, FluidStepInfo, PhysParams, RegParams, admissible_dt, fluid_step
from .grid import BoundaryData, SpatialGrid, VelocityGrid
from .kernel import AlignmentMoments, KernelSpec, compute_moments, zero_kernel
from .kinetic import KAPPA0_DEFAULT, KineticStepInfo, kinetic_step, transport_cfl, velocity_admissible_dt


@dataclass
class CoupledState:
    f: np.ndarray
    fluid: FluidField
    t: float = 0.0
    step: int = 0

    def copy(self) -> "CoupledState":
        return CoupledState(self.f.copy(), self.fluid.copy(), self.t, self.step)


@dataclass
class FixedPointReport:
    dt: float
    damping: float
    dE: list[float] = field(default_factory=list)
    dq: list[float] = field(default_factory=list)
    du: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.dE)

    def as_dict(self) -> dict:
        return {"dt": self.dt, "damping": self.damping, "iterations": self.iterations, "converged": self.converged,
                "dE": self.dE, "dq": self.dq, "du": self.du}


@dataclass
class StepRecord:
    t: float  # time at the end of the step
    dt: float
    report: FixedPointReport
    kinetic: KineticStepInfo
    fluid: FluidStepInfo | None
    moments: AlignmentMoments  # (E, q) of the committed f
    kinetic_mass_change: float
    fluid_mass_change: float

    @property
    def drag_mismatch(self) -> np.ndarray:
        """Kinetic plus fluid drag momentum change (zero for an exact exchange)."""
        fluid = self.fluid.drag if self.fluid is not None else 0.0
        return self.kinetic.drag_exchange + fluid


@dataclass
class Problem:
    """Everything that stays fixed during a run."""

    grid: SpatialGrid
    vgrid: VelocityGrid
    boundary: BoundaryData
    kernel: KernelSpec = field(default_factory=zero_kernel)
    phys: PhysParams = field(default_factory=PhysParams)
    reg: RegParams = field(default_factory=RegParams)
    kappa0: int = KAPPA0_DEFAULT
    implicit_velocity: bool = True
    fluid_mode: str = "coupled"  # "coupled" or "frozen" (fluid held fixed, still drives the drag)
    kinetic_source: Callable | None = None  # S(t, x, v)
    fluid_source: Callable | None = None  # (t) -> (S_rho, S_m) cell arrays
    tol: float = 1e-8
    max_iter: int = 50
    damping: float = 1.0
    retry_damping: float = 0.5
    max_retries: int = 4
    keep_star: bool = False
    check_fluid_dt: bool = True

    def __post_init__(self):
        if self.fluid_mode not in ("coupled", "frozen"):
            raise ValueError(f"fluid_mode must be 'coupled' or 'frozen', got {self.fluid_mode!r}")
        self.reg.check_beta(self.phys.gamma)

    @cached_property
    def kernel_matrix(self) -> np.ndarray:
        return self.kernel.matrix(self.grid)

    def moments(self, f: np.ndarray) -> AlignmentMoments:
        return compute_moments(f, self.kernel_matrix, self.grid, self.vgrid)

    def chi(self, u: np.ndarray) -> np.ndarray:
        if self.reg.N is None or not math.isfinite(self.reg.N):
            return np.ones(self.grid.shape, dtype=bool)
        return np.linalg.norm(u, axis=-1) <= self.reg.N

    def admissible_dt(self, state: CoupledState) -> dict:
        """Stability limits of every sub-solver at the given state."""
        u = state.fluid.u
        mom = self.moments(state.f)
        out = {"transport": transport_cfl(self.grid, self.vgrid)}
        out["velocity"] = velocity_admissible_dt(self.grid, self.vgrid, u, mom, self.reg.N, self.implicit_velocity)
        if self.fluid_mode == "coupled":
            fl = admissible_dt(self.grid, state.fluid.rho, u, self.phys, self.reg, self.boundary)
            out.update({f"fluid_{k}": v for k, v in fl.items() if k != "dt"})
        out["dt"] = min(out.values())
        return out


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    diff = float(np.max(np.abs(new - old), initial=0.0))
    return diff / max(1.0, float(np.max(np.abs(new), initial=0.0)))


def picard_step(problem: Problem, state: CoupledState, dt: float, damping: float | None = None) -> tuple[CoupledState, StepRecord]:
    """Advance one step of size ``dt`` with the fixed-point iteration on ``(E, q, u)``."""
    p = problem
    theta = p.damping if damping is None else damping
    report = FixedPointReport(dt, theta)
    grid, vgrid = p.grid, p.vgrid
    mom = p.moments(state.f)
    u_tilde = state.fluid.u
    vol = grid.cell_volume
    mass_f0 = float(state.f.sum()) * vol * vgrid.cell_volume
    src_f = None
    if p.kinetic_source is not None:
        src_f = p.kinetic_source
    for _ in range(p.max_iter):
        f_new, kinfo = kinetic_step(
            state.f, grid, vgrid, dt, u_tilde, mom, p.reg.N, p.boundary, state.t, p.kappa0, p.implicit_velocity, src_f, p.keep_star
        )
        mom_new = p.moments(f_new)
        if p.fluid_mode == "coupled":
            sources = p.fluid_source(state.t + 0.5 * dt) if p.fluid_source is not None else None
            fluid_new, finfo = fluid_step(
                grid, state.fluid, dt, p.phys, p.reg, p.boundary, kinfo.n_star, kinfo.j_star, p.chi(u_tilde), sources, p.check_fluid_dt
            )
        else:
            fluid_new, finfo = state.fluid.copy(), None
        u_new = fluid_new.u
        dE = _rel_change(mom_new.E, mom.E)
        dq = _rel_change(mom_new.q, mom.q)
        du_abs = math.sqrt(float((kinfo.n_star * np.sum((u_new - u_tilde) ** 2, axis=-1)).sum()) * vol)
        du_ref = math.sqrt(float((kinfo.n_star * np.sum(u_new**2, axis=-1)).sum()) * vol)
        du = du_abs / max(1.0, du_ref)
        report.dE.append(dE)
        report.dq.append(dq)
        report.du.append(du)
        if max(dE, dq, du) <= p.tol:
            report.converged = True
            break
        mom = AlignmentMoments((1 - theta) * mom.q + theta * mom_new.q, (1 - theta) * mom.E + theta * mom_new.E)
        u_tilde = (1 - theta) * u_tilde + theta * u_new
    if not report.converged:
        raise ConvergenceError(
            f"Picard iteration did not converge in {p.max_iter} sweeps at t={state.t:g}, dt={dt:g} "
            f"(last changes dE={report.dE[-1]:.2e}, dq={report.dq[-1]:.2e}, du={report.du[-1]:.2e})",
            report=report,
        )
    mass_f1 = float(f_new.sum()) * vol * vgrid.cell_volume
    rec = StepRecord(
        t=state.t + dt,
        dt=dt,
        report=report,
        kinetic=kinfo,
        fluid=finfo,
        moments=mom_new,
        kinetic_mass_change=mass_f1 - mass_f0,
        fluid_mass_change=fluid_new.mass(grid) - state.fluid.mass(grid),
    )
    return CoupledState(f_new, fluid_new, state.t + dt, state.step + 1), rec


def advance(problem: Problem, state: CoupledState, dt: float, retries: int | None = None, damping: float | None = None):
    """One step with rejection: on non-convergence, two damped half steps (recursively).

    Returns the final state and the committed ``(state, record)`` pairs.
    """
    retries = problem.max_retries if retries is None else retries
    try:
        new, rec = picard_step(problem, state, dt, damping)
        return new, [(new, rec)]
    except ConvergenceError as err:
        if retries <= 0:
            raise ConvergenceError(f"{err} (retry budget exhausted)", report=err.report) from None
        mid, steps1 = advance(problem, state, 0.5 * dt, retries - 1, problem.retry_damping)
        end, steps2 = advance(problem, mid, 0.5 * dt, retries - 1, problem.retry_damping)
        return end, steps1 + steps2


@dataclass
class RunResult:
    state: CoupledState
    records: list[StepRecord]
    snapshots: list[CoupledState]
    ledger: object | None = None


def step_sizes(T: float, dt: float) -> list[float]:
    """Uniform steps of ``dt`` covering ``[0, T]``; the last one is shortened to land on ``T``."""
    if T <= 0:
        return []
    n = max(1, math.ceil(T / dt - 1e-9))
    out = [dt] * (n - 1)
    out.append(T - dt * (n - 1))
    return out


def run(
    problem: Problem,
    state0: CoupledState,
    T: float,
    dt: float | None = None,
    cfl: float | None = None,
    report_every: int = 1,
    keep_snapshots: bool = True,
    observers: list | None = None,
    max_steps: int = 1_000_000,
) -> RunResult:
    """Time loop. Either a fixed ``dt`` or a CFL number applied to the smallest sub-solver limit.

    ``observers`` are called as ``obs(state, record)`` after every committed step.
    """
    if (dt is None) == (cfl is None):
        raise ValueError("give exactly one of dt or cfl")
    state = state0.copy()
    records: list[StepRecord] = []
    snaps = [state.copy()] if keep_snapshots else []
    observers = observers or []

    def commit(steps):
        for st, r in steps:
            records.append(r)
            for obs in observers:
                obs(st, r)
            if keep_snapshots and (st.step % report_every == 0):
                snaps.append(st.copy())

    if dt is not None:
        for h in step_sizes(T, dt):
            state, steps = advance(problem, state, h)
            commit(steps)
    else:
        while state.t < T * (1 - 1e-12):
            if state.step >= max_steps:
                raise StepSizeError(f"run exceeded {max_steps} steps", 0.0)
            h = min(cfl * problem.admissible_dt(state)["dt"], T - state.t)
            state, steps = advance(problem, state, h)
            commit(steps)
    if keep_snapshots and snaps[-1].step != state.step:
        snaps.append(state.copy())
    return RunResult(state, records, snaps)
