import numpy as np
import pytest
from scipy.integrate import quad

from csns import PRESETS, build_problem, load_config, run
from csns.coupling import CoupledState
from csns.diagnostics import (
    Bump,
    EnergyLedger,
    KineticTest,
    LedgerContext,
    critical_exponent,
    fit_tolerance,
    flocking_metrics,
    lemma_moment_bound,
    rate_terms,
    replay_ledger,
    state_terms,
    time_weights,
    weakform_residual,
)
from csns.diagnostics.weakform import continuity_residual, kinetic_residual, momentum_residual, time_profile
from csns.errors import PreconditionError
from csns.fluid import FluidField
from csns.grid import build_grids
from csns.kernel import kernel_dissipation
from csns.kinetic import moment


def sealed(overrides=None):
    cfg = load_config("sealed-equilibrium", overrides)
    return cfg, *build_problem(cfg)


# ----------------------------------------------------------------------------- ledger


def test_state_terms_of_resting_unit_fluid_without_particles():
    cfg, pb, st = sealed()
    ctx = LedgerContext.from_problem(pb)
    terms = state_terms(ctx, np.zeros_like(st.f), np.ones(pb.grid.shape), np.zeros(pb.grid.shape + (1,)))
    assert terms["internal"] == pytest.approx(pb.grid.volume / (pb.phys.gamma - 1), rel=1e-14)
    assert terms["fluid_kinetic"] == terms["particle_kinetic"] == terms["rho_squared"] == terms["artificial_internal"] == 0.0


def test_zero_state_ledger_row():
    _, pb, st = sealed()
    zero = CoupledState(np.zeros_like(st.f), FluidField(np.ones(pb.grid.shape), np.zeros(pb.grid.shape + (1,))))
    led = EnergyLedger.start(LedgerContext.from_problem(pb), zero)
    row = led.final
    assert row["slack"] == 0.0 and row["closure"] == 0.0
    assert row["lhs"] == pytest.approx(pb.grid.volume / (pb.phys.gamma - 1))


def test_kernel_dissipation_term_matches_kernel_module():
    _, pb, st = sealed()
    rng = np.random.default_rng(4)
    f = st.f * (1 + 0.3 * rng.random(st.f.shape))
    rates = rate_terms(LedgerContext.from_problem(pb), f, st.fluid.rho, st.fluid.m)
    assert rates["kernel_dissipation"] == pytest.approx(kernel_dissipation(f, pb.kernel_matrix, pb.grid, pb.vgrid, pb.kernel.k_max), rel=1e-14)
    assert rates["kernel_dissipation"] > 0


def test_online_and_replayed_ledgers_agree_and_close():
    raw = PRESETS["flocking-decay"]()
    cfg = load_config(raw)
    pb, st = build_problem(cfg)
    led_online = EnergyLedger.start(LedgerContext.from_problem(pb), st)
    res = run(pb, st, 20 * cfg.time.dt, dt=cfg.time.dt, observers=[led_online])
    led = replay_ledger(pb, res.snapshots, res.records)
    assert len(led.rows) == len(led_online.rows) == 21
    for a, b in zip(led.rows, led_online.rows):
        assert a["slack"] == pytest.approx(b["slack"], rel=1e-13, abs=1e-15)
        assert abs(a["closure"]) <= 1e-12 * a["scale"]
    assert led.final["kernel_dissipation"] > 0
    with pytest.raises(ValueError, match="snapshot"):
        replay_ledger(pb, res.snapshots[:-1], res.records)


def test_flocking_energy_identity_under_refinement():
    """K = 1, sealed, fluid frozen at rest: KE(t) + int (D_K + 2 KE - d M) = KE(0) up to discretization error."""
    devs = []
    for k in range(3):
        cfg = load_config("flocking-decay", [f"time.dt={2.5e-3 / 2**k}", f"grid.v_cells={64 * 2**k}", "time.T=0.25"])
        pb, st = build_problem(cfg)
        res = run(pb, st, cfg.time.T, dt=cfg.time.dt)
        g, vg = pb.grid, pb.vgrid
        M, ke0 = moment(st.f, g, vg, 0), 0.5 * moment(st.f, g, vg, 2)
        integral, dev = 0.0, 0.0
        for snap, rec in zip(res.snapshots[1:], res.records):
            ke = 0.5 * moment(snap.f, g, vg, 2)
            integral += rec.dt * (kernel_dissipation(snap.f, pb.kernel_matrix, g, vg) + 2 * ke - g.dim * M)
            dev = max(dev, abs(ke + integral - ke0))
        devs.append(dev)
    assert all(np.log2(devs[i] / devs[i + 1]) >= 1.0 for i in range(2))


def test_fit_tolerance():
    assert fit_tolerance([0.1, 0.05], [0.0, -1.0]) == {"C_E": 0.0, "orders": [], "pass": True}
    hs = [0.1, 0.05, 0.025]
    second = fit_tolerance(hs, [3 * h**2 for h in hs])
    assert second["pass"] and second["orders"] == pytest.approx([2.0, 2.0])
    assert second["C_E"] == pytest.approx(0.3)
    stuck = fit_tolerance(hs, [1e-3] * 3)
    assert not stuck["pass"] and stuck["orders"] == pytest.approx([0.0, 0.0], abs=1e-12)


# ----------------------------------------------------------------------------- lemma


def test_critical_exponents():
    assert critical_exponent(5, 1) == 6.0 and critical_exponent(5, 1, "j") == 3.0
    assert critical_exponent(5, 3) == pytest.approx(8 / 3)


def test_lemma_for_zero_and_indicator_distributions():
    g, vg = build_grids([[0.0, 1.0], [0.0, 1.0]], [4, 4], 4.0, 8)
    zero = lemma_moment_bound(np.zeros(g.shape + vg.shape), g, vg)
    assert zero.lhs == 0.0 and zero.passed
    f = np.zeros(g.shape + vg.shape)
    inner = np.linalg.norm(vg.mesh - [1.0, 0.5], axis=-1) < 2.0  # off-centre so that j != 0
    f[1:3, 1:3][:, :, inner] = 1.0
    for which in ("n", "j"):
        res = lemma_moment_bound(f, g, vg, which=which, p=1.5)
        assert res.passed and res.lhs > 0 and res.lhs <= res.rhs


def test_lemma_preconditions():
    g, vg = build_grids([[0.0, 1.0]], [4], 4.0, 8)
    f = np.ones(g.shape + vg.shape)
    with pytest.raises(PreconditionError, match="outside"):
        lemma_moment_bound(f, g, vg, p=7.0)
    with pytest.raises(PreconditionError, match="f >= 0"):
        lemma_moment_bound(-f, g, vg)
    with pytest.raises(PreconditionError, match="which"):
        lemma_moment_bound(f, g, vg, which="q")


# ----------------------------------------------------------------------------- weak forms


def test_time_weights_integrate_piecewise_linear_data_exactly():
    T = 0.7
    times = np.array([0.0, 0.1, 0.25, 0.45, 0.7])
    a = lambda t: 1.0 + 2.0 * t  # noqa: E731
    w_tau, w_dtau = time_weights(times, T)
    exact_tau = quad(lambda t: time_profile(t, T)[0] * a(t), 0, T)[0]
    exact_dtau = quad(lambda t: time_profile(t, T)[1] * a(t), 0, T)[0]
    assert w_tau @ a(times) == pytest.approx(exact_tau, rel=1e-13)
    assert w_dtau @ a(times) == pytest.approx(exact_dtau, rel=1e-13)
    assert w_dtau.sum() == pytest.approx(-1.0, rel=1e-14)  # tau(T) - tau(0)


def test_bump_cell_means_of_derivatives_telescope():
    b = Bump((0.5,), (0.3,))
    c = (np.arange(20) + 0.5) / 20
    val, grad, lap, _, _ = b.cell_means([c], [0.05])
    assert abs(grad.sum()) <= 1e-13 and abs(lap.sum()) <= 1e-11
    assert val.sum() * 0.05 == pytest.approx(quad(lambda z: b.evaluate(np.array([[z]]))[0][0], 0.2, 0.8)[0], rel=1e-10)


def test_steady_run_fluid_weak_forms_vanish_and_kinetic_residual_is_second_order_in_dv():
    kin = []
    for nv in (16, 32, 64):
        cfg, pb, st = sealed([f"grid.v_cells={nv}"])
        res = run(pb, st, 20 * cfg.time.dt, dt=cfg.time.dt)
        w = weakform_residual(pb, res.snapshots)
        assert np.max(np.abs(w["continuity"])) <= 1e-9
        assert np.max(np.abs(w["momentum"])) <= 1e-9
        kin.append(float(np.max(np.abs(w["kinetic"]))))
    assert all(np.log2(kin[i] / kin[i + 1]) >= 1.9 for i in range(2))


def test_test_function_vanishing_on_the_grid_gives_zero_residual():
    cfg, pb, st = sealed()
    res = run(pb, st, 5 * cfg.time.dt, dt=cfg.time.dt)
    outside = Bump((5.0,), (0.1,))
    assert continuity_residual(pb, res.snapshots, [outside])[0] == 0.0
    assert not momentum_residual(pb, res.snapshots, [outside]).any()
    far_v = KineticTest(Bump((0.5,), (0.2,)), Bump((50.0,), (1.0,)))
    assert kinetic_residual(pb, res.snapshots, [far_v])[0] == 0.0


def test_kinetic_test_must_stay_away_from_walls():
    cfg, pb, st = sealed()
    bad = KineticTest(Bump((0.1,), (0.2,)), Bump((0.0,), (2.0,)))
    later = st.copy()
    later.t = cfg.time.dt
    with pytest.raises(PreconditionError, match="wall"):
        kinetic_residual(pb, [st, later], [bad])


# ----------------------------------------------------------------------------- flocking


def test_flocking_metrics_of_monokinetic_and_bimodal_distributions():
    g, vg = build_grids([[0.0, 1.0]], [4], 4.0, 8)
    f = np.zeros(g.shape + vg.shape)
    f[:, 6] = 1.0  # every particle at v = 2.5
    mono = flocking_metrics(f, g, vg)
    assert mono.mean_velocity[0] == pytest.approx(2.5) and mono.variance == pytest.approx(0.0, abs=1e-14)
    assert mono.momentum_spread == pytest.approx(0.0, abs=1e-14)
    f = np.zeros_like(f)
    f[:2, 6] = 1.0
    f[2:, 1] = 1.0  # v = -2.5 on the right half
    bi = flocking_metrics(f, g, vg)
    assert bi.mean_velocity[0] == pytest.approx(0.0, abs=1e-14)
    assert bi.variance == pytest.approx(2.5**2) and bi.momentum_spread == pytest.approx(2.5**2)
    with pytest.raises(PreconditionError):
        flocking_metrics(np.zeros_like(f), g, vg)
