"""Property-based checks of the structural invariants on random small inputs."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from csns.diagnostics import lemma_moment_bound
from csns.fluid import PhysParams, stress_dissipation
from csns.grid import build_grids, make_boundary
from csns.kernel import alignment_momentum_exchange, compute_moments, gaussian_kernel, kernel_dissipation
from csns.kinetic import kinetic_step, velocity_admissible_dt

SETTINGS = settings(max_examples=25, deadline=None)

seeds = st.integers(0, 2**32 - 1)


def random_phase(seed, dim=None):
    rng = np.random.default_rng(seed)
    d = dim or int(rng.integers(1, 3))
    cells = [int(rng.integers(3, 7)) for _ in range(d)]
    g, vg = build_grids([[0.0, float(rng.uniform(0.5, 2.0))] for _ in range(d)], cells, float(rng.uniform(2.0, 5.0)), 2 * int(rng.integers(2, 5)))
    f = rng.random(g.shape + vg.shape) ** 3
    return rng, g, vg, f


@SETTINGS
@given(seeds, st.floats(0.05, 2.0))
def test_symmetric_kernel_exchange_vanishes_and_dissipation_is_nonnegative(seed, width):
    _, g, vg, f = random_phase(seed)
    K = gaussian_kernel(1.0, width).matrix(g)
    mom = compute_moments(f, K, g, vg)
    scale = float(f.sum()) ** 2 * g.cell_volume**2 * vg.cell_volume**2 * vg.vmax
    assert np.max(np.abs(alignment_momentum_exchange(f, mom, g, vg))) <= 1e-13 * scale
    assert kernel_dissipation(f, K, g, vg) >= -1e-13 * scale * vg.vmax


@SETTINGS
@given(seeds)
def test_stress_dissipation_is_nonnegative(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    mu1 = float(rng.uniform(0.01, 2.0))
    mu2 = float(rng.uniform(-2 * mu1 / 3, 2.0))
    G = rng.standard_normal((10, d, d))
    assert np.all(stress_dissipation(G, PhysParams(mu1=mu1, mu2=mu2)) >= -1e-12)


@SETTINGS
@given(seeds)
def test_sealed_kinetic_step_keeps_positivity_and_mass(seed):
    rng, g, vg, f = random_phase(seed)
    d = g.dim
    bd = make_boundary(g, [0.0] * d)
    U = 0.5 * rng.standard_normal(g.shape + (d,))
    mom = compute_moments(f, gaussian_kernel(0.5, 0.5).matrix(g), g, vg)
    dt = 0.5 * min(min(h / vg.vmax for h in g.dx), velocity_admissible_dt(g, vg, U, mom))
    new, info = kinetic_step(f, g, vg, dt, U, mom, None, bd)
    assert new.min() >= 0.0
    w = g.cell_volume * vg.cell_volume
    change = (new.sum() - f.sum()) * w
    assert abs(change + info.flux.net[0]) <= 1e-12 * f.sum() * w
    assert change <= 1e-14 * f.sum() * w  # walls without an inflow trace only let mass out


@SETTINGS
@given(seeds, st.floats(0.0, 1.0))
def test_moment_bounds_hold_for_random_distributions(seed, s):
    _, g, vg, f = random_phase(seed)
    for which in ("n", "j"):
        p_star = (5 + g.dim) / (g.dim if which == "n" else g.dim + 1)
        res = lemma_moment_bound(f, g, vg, 5, p=1.0 + s * (p_star - 1.0), which=which)
        assert res.passed


@SETTINGS
@given(seeds)
def test_kinetic_step_is_deterministic(seed):
    rng, g, vg, f = random_phase(seed, dim=1)
    bd = make_boundary(g, [0.0])
    U = rng.standard_normal(g.shape + (1,))
    mom = compute_moments(f, gaussian_kernel().matrix(g), g, vg)
    dt = 0.4 * min(g.dx[0] / vg.vmax, velocity_admissible_dt(g, vg, U, mom))
    a, _ = kinetic_step(f, g, vg, dt, U, mom, None, bd)
    b, _ = kinetic_step(f.copy(), g, vg, dt, U.copy(), mom, None, bd)
    assert np.array_equal(a, b)
