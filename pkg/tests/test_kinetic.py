import numpy as np
import pytest

from mms import Manufactured, observed_orders

from csns.errors import StepSizeError
from csns.grid import build_grids, make_boundary
from csns.kernel import AlignmentMoments, compute_moments, constant_kernel
from csns.kinetic import (
    bernoulli,
    compute_momentset,
    kinetic_step,
    linf_bound,
    maxwellian,
    moment_identity_residual,
    transport_cfl,
    transport_step,
    truncate_velocity,
    velocity_step,
)


def interior_bump(g, vg, mean=0.0):
    r = np.abs(g.centers[0] - 0.5) / 0.25
    bump = np.where(r < 1, np.cos(0.5 * np.pi * np.clip(r, 0, 1)) ** 4, 0.0)
    return bump[:, None] * maxwellian(vg, 1.0, [mean], 1.0)


def mass(f, g, vg):
    return float(f.sum()) * g.cell_volume * vg.cell_volume


# ----------------------------------------------------------------------------- transport


def test_transport_conserves_mass_with_interior_support():
    g, vg = build_grids([[0.0, 1.0]], [64], 4.0, 16)
    bd = make_boundary(g, [0.0], 1.0)
    f = interior_bump(g, vg) * (np.abs(vg.centers[0]) < 2)[None, :]
    M0 = mass(f, g, vg)
    dt = 0.9 * transport_cfl(g, vg)
    for _ in range(5):
        f, flux = transport_step(f, g, vg, dt, bd)
        assert not flux.net.any()
    assert abs(mass(f, g, vg) - M0) <= 1e-14 * M0


def test_inflow_mass_after_one_step_matches_flux_sum():
    g, vg = build_grids([[0.0, 1.0]], [8], 2.0, 4)
    gval = 0.7
    bd = make_boundary(g, [0.0], 1.0, g=lambda t, x, v, side: np.full(np.broadcast_shapes(x.shape[:-1], v.shape[:-1]), gval))
    dt = 0.5 * transport_cfl(g, vg)
    f, flux = transport_step(np.zeros(g.shape + vg.shape), g, vg, dt, bd)
    v = vg.centers[0]
    expected = 2 * dt * np.sum(np.abs(v[v > 0]) * gval) * g.face_area(0) * vg.cell_volume
    assert mass(f, g, vg) == pytest.approx(expected, rel=1e-14)
    assert -flux.net[0] == pytest.approx(expected, rel=1e-14)


def test_unit_cfl_transport_is_an_exact_shift():
    g, vg = build_grids([[0.0, 1.0]], [10], 2.0, 2, periodic=[True])  # v = -1, +1
    f = np.zeros(g.shape + vg.shape)
    f[2:5, 1] = 1.0
    f[6:8, 0] = 2.0
    dt = g.dx[0]
    out, _ = transport_step(f, g, vg, dt)
    np.testing.assert_array_equal(out[:, 1], np.roll(f[:, 1], 1))
    np.testing.assert_array_equal(out[:, 0], np.roll(f[:, 0], -1))


def test_transport_rejects_cfl_violation():
    g, vg = build_grids([[0.0, 1.0]], [10], 2.0, 4)
    with pytest.raises(StepSizeError):
        transport_step(np.zeros(g.shape + vg.shape), g, vg, 2 * transport_cfl(g, vg))


# ----------------------------------------------------------------------------- velocity step


def test_bernoulli_function():
    w = np.array([-2.0, -1e-10, 0.0, 1e-10, 3.0])
    np.testing.assert_allclose(bernoulli(w), w / np.expm1(np.where(w == 0, 1, w)) * (w != 0) + (w == 0), rtol=1e-9)
    # exponential fitting: B(-w) / B(w) = exp(w)
    np.testing.assert_allclose(bernoulli(-w) / bernoulli(w), np.exp(w), rtol=1e-12)


@pytest.mark.parametrize("d", [1, 2])
def test_velocity_step_preserves_maxwellian(d):
    g, vg = build_grids([[0.0, 1.0]] * d, [3] * d, 8.0, 16)
    U = np.array([0.4, -0.3][:d])
    f0 = maxwellian(vg, np.linspace(0.5, 1.5, g.ncells).reshape(g.shape), np.broadcast_to(U, g.shape + (d,)), 1.0)
    f, _ = velocity_step(f0, g, vg, 0.05, U)
    assert np.abs(f - f0).sum() <= 1e-10 * f0.sum()


def test_velocity_step_of_zero_is_zero():
    g, vg = build_grids([[0.0, 1.0]], [3], 4.0, 8)
    f, _ = velocity_step(np.zeros(g.shape + vg.shape), g, vg, 0.1, np.array([0.5]))
    assert not f.any()


def test_velocity_step_keeps_positivity_and_cell_mass():
    rng = np.random.default_rng(3)
    g, vg = build_grids([[0.0, 1.0]], [4], 4.0, 12)
    f0 = rng.random(g.shape + vg.shape) * (rng.random(g.shape + vg.shape) < 0.5)
    mom = AlignmentMoments(rng.random(g.shape), rng.normal(size=g.shape + (1,)))
    f, _ = velocity_step(f0, g, vg, 0.05, rng.normal(size=g.shape + (1,)), mom)
    assert f.min() >= 0
    np.testing.assert_allclose(f.sum(axis=1), f0.sum(axis=1), rtol=1e-13)


def _relaxed_mean(v_cells, dt, t_end=1.0):
    g, vg = build_grids([[0.0, 1.0]], [2], 8.0, v_cells)
    f = maxwellian(vg, np.ones(g.shape), np.full(g.shape + (1,), 1.0), 1.0)
    J0 = float((f * vg.mesh[..., 0]).sum())
    steps = int(round(t_end / dt))
    for _ in range(steps):
        f, _ = velocity_step(f, g, vg, dt, np.zeros(g.shape + (1,)))
    return float((f * vg.mesh[..., 0]).sum()) / J0, steps


def test_mean_velocity_relaxes_at_unit_rate_first_order_in_time():
    """u = 0, K = 0: d/dt J = -J. Successive dt-halvings shrink the change at order 1."""
    Js = [_relaxed_mean(64, dt)[0] for dt in (0.02, 0.01, 0.005)]
    d1, d2 = abs(Js[0] - Js[1]), abs(Js[1] - Js[2])
    assert np.log2(d1 / d2) >= 0.9
    assert abs(Js[-1] - np.exp(-1.0)) <= 0.01


def test_mean_velocity_deviation_from_backward_euler_is_second_order_in_dv():
    """Against the backward-Euler ODE value (1 + dt)^-n the only error left is the discrete drift moment."""
    errs = []
    for v_cells in (64, 128):
        J, steps = _relaxed_mean(v_cells, 0.005)
        errs.append(abs(J - (1.0 + 0.005) ** -steps))
    assert np.log2(errs[0] / errs[1]) >= 1.9


def test_truncation_switches_off_fast_cells():
    u = np.array([[0.5], [2.0], [-3.0]])
    np.testing.assert_array_equal(truncate_velocity(u, 1.0), [[0.5], [0.0], [0.0]])
    assert truncate_velocity(u, None) is u
    assert truncate_velocity(u, np.inf) is u


def test_truncated_drag_velocity_used_in_velocity_step():
    g, vg = build_grids([[0.0, 1.0]], [2], 4.0, 8)
    U = np.array([[0.5], [3.0]])
    _, U_N = velocity_step(np.zeros(g.shape + vg.shape), g, vg, 0.01, U, N=1.0)
    np.testing.assert_array_equal(U_N, [[0.5], [0.0]])


# ----------------------------------------------------------------------------- kinetic step


def test_zero_dt_is_identity():
    g, vg = build_grids([[0.0, 1.0]], [4], 4.0, 8)
    f = np.random.default_rng(0).random(g.shape + vg.shape)
    out, info = kinetic_step(f, g, vg, 0.0, np.zeros(g.shape + (1,)), None)
    assert np.array_equal(out, f)
    assert info.dt == 0.0


def test_kinetic_step_positive_and_conservative_with_interior_support():
    g, vg = build_grids([[0.0, 1.0]], [32], 6.0, 24)
    bd = make_boundary(g, [0.0], 1.0)
    f = interior_bump(g, vg, 0.5)
    mom = compute_moments(f, constant_kernel(1.0), g, vg)
    out, info = kinetic_step(f, g, vg, 0.5 * transport_cfl(g, vg), np.full(g.shape + (1,), 0.2), mom, boundary=bd)
    assert out.min() >= 0
    assert abs(mass(out, g, vg) - mass(f, g, vg)) <= 1e-14 * mass(f, g, vg)


def test_kinetic_manufactured_solution_converges():
    errs = []
    T = 0.2
    for n in (16, 32, 64):
        mm = Manufactured(n, n)
        g, vg = mm.grid, mm.vgrid
        bd = make_boundary(g, [0.0], 1.0, g=mm.trace)
        K = constant_kernel(mm.case.k0).matrix(g)
        f = mm.f(0.0)
        steps = int(np.ceil(T / (0.4 * transport_cfl(g, vg))))
        dt = T / steps
        for k in range(steps):
            t = k * dt
            U = np.asarray(mm.sym["u"](t + 0.5 * dt, g.centers[0]))[:, None]
            f, _ = kinetic_step(f, g, vg, dt, U, compute_moments(f, K, g, vg), boundary=bd, t=t, source=mm.kinetic_source)
        errs.append(float(np.abs(f - mm.f(T)).sum()) * g.cell_volume * vg.cell_volume)
    orders = observed_orders([1, 0.5, 0.25], errs)
    assert min(orders) >= 1.0, (errs, orders)


# ----------------------------------------------------------------------------- moments


def test_moments_of_zero_field():
    g, vg = build_grids([[0.0, 1.0]], [4], 4.0, 8)
    ms = compute_momentset(np.zeros(g.shape + vg.shape), g, vg)
    assert not ms.n.any() and not ms.j.any() and not ms.m.any()


def test_single_cell_moments():
    g, vg = build_grids([[0.0, 1.0]], [4], 4.0, 8)
    f = np.zeros(g.shape + vg.shape)
    m, iv = 0.3, 6
    f[1, iv] = m / (g.cell_volume * vg.cell_volume)
    ms = compute_momentset(f, g, vg, kappa0=5)
    assert ms.n[1] == pytest.approx(m / g.dx[0])
    for k in range(6):
        assert ms.m[k] == pytest.approx(m * abs(vg.centers[0][iv]) ** k, rel=1e-14)


def test_discrete_maxwellian_second_moment():
    g, vg = build_grids([[0.0, 1.0]], [2], 8.0, 256)
    ms = compute_momentset(maxwellian(vg, np.ones(g.shape), None, 1.0), g, vg)
    assert ms.m[2] / ms.m[0] == pytest.approx(1.0, abs=1e-6)


def test_linf_bound_formula():
    assert linf_bound(2.0, 1.0, 0.5, 0.1, 2) == pytest.approx(np.exp(2 * 1.5 * 0.1) * 3.0)


# ----------------------------------------------------------------------------- moment identities


def _trajectory(n, T=0.05, U=0.0, k0=0.0):
    g, vg = build_grids([[0.0, 1.0]], [n], 8.0, n)
    bd = make_boundary(g, [0.0], 1.0)
    f = interior_bump(g, vg)
    K = constant_kernel(k0).matrix(g)
    steps = int(round(T / (0.5 * transport_cfl(g, vg))))
    dt = T / steps
    fb, fa, infos = [], [], []
    for k in range(steps):
        fn, info = kinetic_step(f, g, vg, dt, np.full(g.shape + (1,), U), compute_moments(f, K, g, vg), None, bd, k * dt, keep_star=True)
        fb.append(f)
        fa.append(fn)
        infos.append(info)
        f = fn
    return g, vg, fb, fa, infos


def test_kappa0_identity_is_the_mass_balance():
    g, vg, fb, fa, infos = _trajectory(32, U=0.4, k0=1.0)
    res = moment_identity_residual(fb, fa, infos, g, vg, 0)
    M = mass(fb[0], g, vg)
    assert np.max(np.abs(res)) * infos[0].dt <= 1e-12 * M


def test_zero_trajectory_has_zero_residual():
    g, vg = build_grids([[0.0, 1.0]], [8], 4.0, 8)
    f = np.zeros(g.shape + vg.shape)
    _, info = kinetic_step(f, g, vg, 0.01, np.zeros(g.shape + (1,)), None, keep_star=True)
    for kappa in (0, 1, 2):
        assert moment_identity_residual([f], [f], [info], g, vg, kappa) == pytest.approx([0.0])


def test_kappa2_identity_converges_without_drift():
    """u = 0, K = 0, g = 0: d/dt m2 = 2 m0 - 2 m2 in one dimension."""
    errs = []
    for n in (16, 32, 64):
        g, vg, fb, fa, infos = _trajectory(n)
        errs.append(float(np.max(np.abs(moment_identity_residual(fb, fa, infos, g, vg, 2)))))
    assert min(observed_orders([1, 0.5, 0.25], errs)) >= 1.0


def test_moment_identity_needs_the_velocity_substep_state():
    g, vg = build_grids([[0.0, 1.0]], [8], 4.0, 8)
    f = np.ones(g.shape + vg.shape)
    _, info = kinetic_step(f, g, vg, 0.01, np.zeros(g.shape + (1,)), None)
    with pytest.raises(ValueError, match="keep_star"):
        moment_identity_residual([f], [f], [info], g, vg, 2)
