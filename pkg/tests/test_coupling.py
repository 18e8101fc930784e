import time

import numpy as np
import pytest

from csns import build_problem, load_config, run, run_scenario
from csns.coupling import CoupledState, Problem, advance, picard_step, step_sizes
from csns.errors import ConfigError, ConvergenceError
from csns.fluid import FluidField, PhysParams, RegParams
from csns.grid import build_grids, make_boundary
from csns.kernel import constant_kernel, zero_kernel
from csns.kinetic import maxwellian


def setup(kernel=None, cells=16, f_scale=1.0, **kw):
    g, vg = build_grids([[0.0, 1.0]], [cells], 6.0, 24)
    bd = make_boundary(g, [0.0], 1.0)
    x = g.centers[0]
    f = f_scale * (1 + 0.3 * np.cos(2 * np.pi * x))[:, None] * maxwellian(vg, 1.0, [0.4], 1.0)
    rho = 1 + 0.1 * np.sin(np.pi * x)
    state = CoupledState(f, FluidField(rho, (rho * 0.1 * np.sin(np.pi * x))[:, None]))
    return Problem(g, vg, bd, kernel or zero_kernel(), PhysParams(mu1=0.1), **kw), state


def test_empty_kinetic_phase_converges_in_one_sweep():
    pb, st = setup(constant_kernel(1.0), f_scale=0.0, tol=1e-12)
    new, rec = picard_step(pb, st, 1e-3)
    assert rec.report.iterations == 1 and rec.report.converged
    assert not new.f.any()


def test_zero_kernel_weak_drag_needs_few_sweeps():
    pb, st = setup(zero_kernel(), tol=1e-10)
    _, rec = picard_step(pb, st, 1e-3)
    assert rec.report.iterations <= 3
    assert rec.report.dE == [0.0] * rec.report.iterations


def test_sweep_count_falls_with_step_size():
    counts = []
    for dt in (4e-3, 1e-3, 2.5e-4, 6.25e-5):
        pb, st = setup(constant_kernel(1.0), tol=1e-10)
        counts.append(picard_step(pb, st, dt)[1].report.iterations)
    assert counts == sorted(counts, reverse=True) and counts[-1] < counts[0]
    pb, st = setup(constant_kernel(1.0), tol=1e-6)
    assert picard_step(pb, st, 1e-8)[1].report.iterations == 1


def test_committed_step_conserves_drag_and_mass():
    pb, st = setup(constant_kernel(1.0), tol=1e-12)
    _, rec = picard_step(pb, st, 1e-3)
    assert np.max(np.abs(rec.drag_mismatch)) <= 1e-12
    assert abs(rec.fluid_mass_change) <= 1e-14
    # no inflow trace: the particle mass drops by exactly the outflow through the walls
    flux = rec.kinetic.flux
    assert rec.kinetic_mass_change < 0
    assert abs(rec.kinetic_mass_change + flux.outflow[0] + flux.inflow[0]) <= 1e-12 * abs(rec.kinetic_mass_change)


def test_non_convergence_is_retried_with_half_steps():
    pb, st = setup(constant_kernel(1.0), tol=1e-10, max_iter=3, retry_damping=1.0)
    end, steps = advance(pb, st, 4e-3)
    assert len(steps) > 1
    assert sum(r.dt for _, r in steps) == pytest.approx(4e-3, rel=1e-14)
    assert end.t == pytest.approx(4e-3, rel=1e-14) and end.step == len(steps)
    assert all(r.report.converged for _, r in steps)


def test_retry_budget_exhaustion_raises():
    pb, st = setup(constant_kernel(1.0), tol=1e-10, max_iter=1)
    with pytest.raises(ConvergenceError, match="retry budget exhausted") as err:
        advance(pb, st, 4e-3, retries=2)
    assert err.value.report.iterations == 1


def test_damping_changes_sweeps_but_not_the_fixed_point():
    pb, st = setup(constant_kernel(1.0), tol=1e-12)
    plain, r1 = picard_step(pb, st, 2e-3)
    damped, r2 = picard_step(pb, st, 2e-3, damping=0.5)
    assert r2.report.damping == 0.5 and r2.report.iterations > r1.report.iterations
    assert np.max(np.abs(plain.f - damped.f)) <= 1e-10 * np.max(plain.f)
    assert np.max(np.abs(plain.fluid.m - damped.fluid.m)) <= 1e-10


def test_zero_length_run_echoes_state():
    pb, st = setup(constant_kernel(1.0))
    res = run(pb, st, 0.0, dt=1e-3)
    assert res.records == [] and len(res.snapshots) == 1
    assert np.array_equal(res.state.f, st.f) and np.array_equal(res.state.fluid.m, st.fluid.m)


def test_step_sizes_land_on_final_time():
    assert step_sizes(0.0, 0.1) == []
    hs = step_sizes(1.0, 0.3)
    assert len(hs) == 4 and sum(hs) == pytest.approx(1.0) and hs[-1] == pytest.approx(0.1)
    assert step_sizes(1.0, 0.25) == [0.25] * 4


def test_run_needs_exactly_one_step_rule():
    pb, st = setup()
    with pytest.raises(ValueError):
        run(pb, st, 0.1)
    with pytest.raises(ValueError):
        run(pb, st, 0.1, dt=1e-3, cfl=0.5)


def test_unknown_fluid_mode_and_bad_beta_rejected():
    g, vg = build_grids([[0.0, 1.0]], [4], 2.0, 4)
    bd = make_boundary(g)
    with pytest.raises(ValueError, match="fluid_mode"):
        Problem(g, vg, bd, fluid_mode="static")
    with pytest.raises(ConfigError, match="beta"):
        Problem(g, vg, bd, reg=RegParams(delta=0.1, beta=3.0))


def test_sealed_equilibrium_is_steady():
    cfg = load_config("sealed-equilibrium")
    pb, st = build_problem(cfg)
    res = run(pb, st, 100 * cfg.time.dt, dt=cfg.time.dt, keep_snapshots=False)
    assert len(res.records) == 100
    assert np.max(np.abs(res.state.f - st.f)) <= 1e-9 * np.max(st.f)
    assert np.max(np.abs(res.state.fluid.m)) <= 1e-9
    assert np.max(np.abs(res.state.fluid.rho - st.fluid.rho)) <= 1e-9


def test_frozen_fluid_mode_keeps_fluid():
    pb, st = setup(constant_kernel(1.0), fluid_mode="frozen")
    res = run(pb, st, 5e-3, dt=1e-3)
    assert np.array_equal(res.state.fluid.rho, st.fluid.rho) and np.array_equal(res.state.fluid.m, st.fluid.m)
    assert all(r.fluid is None for r in res.records)


def test_two_dimensional_smoke_scenario_is_fast():
    t0 = time.perf_counter()
    outcome = run_scenario(load_config("coupled-smoke"))
    assert outcome.exit_code == 0
    assert time.perf_counter() - t0 < 10.0
