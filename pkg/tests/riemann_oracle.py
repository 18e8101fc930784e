"""Loop-based reference solver for the 1-D barotropic fluid without particles.

Independent re-implementation (plain Python floats, no package imports) of
the fluid scheme on a walled interval: upwind continuity with face-averaged
velocities, then an explicit momentum update with a Rusanov convective flux,
face-averaged pressure and a two-point viscous flux, all driven by the old
time level. It is used as an oracle on the same grid and step sequence.
"""

from __future__ import annotations

import math


def _step(rho, m, dt, h, gamma, visc):
    n = len(rho)
    u = [mi / ri if ri > 0 else 0.0 for ri, mi in zip(rho, m)]
    p = [ri**gamma for ri in rho]
    lam = [abs(ui) + math.sqrt(gamma * ri ** (gamma - 1)) for ui, ri in zip(u, rho)]

    # continuity: faces 0..n, walls carry no flux
    F = [0.0] * (n + 1)
    for i in range(1, n):
        uf = 0.5 * (u[i - 1] + u[i])
        F[i] = (rho[i - 1] if uf >= 0 else rho[i]) * uf
    rho_new = [rho[i] - dt / h * (F[i + 1] - F[i]) for i in range(n)]

    # momentum fluxes on faces
    conv = [0.0] * (n + 1)
    pres = [0.0] * (n + 1)
    vis = [0.0] * (n + 1)
    for i in range(1, n):
        a = max(lam[i - 1], lam[i])
        conv[i] = 0.5 * (m[i - 1] * u[i - 1] + m[i] * u[i]) - 0.5 * a * (m[i] - m[i - 1])
        pres[i] = 0.5 * (p[i - 1] + p[i])
        vis[i] = -visc * (u[i] - u[i - 1]) / h
    pres[0], pres[n] = p[0], p[n - 1]
    vis[0] = -visc * (u[0] - 0.0) / (0.5 * h)
    vis[n] = -visc * (0.0 - u[n - 1]) / (0.5 * h)
    m_new = []
    for i in range(n):
        r = m[i]
        r -= dt * (conv[i + 1] - conv[i]) / h
        r -= dt * (pres[i + 1] - pres[i]) / h
        r -= dt * (vis[i + 1] - vis[i]) / h
        m_new.append(r)
    return rho_new, m_new


def solve(rho0, m0, dts, length=1.0, gamma=5.0 / 3.0, mu1=1.0, mu2=0.0):
    """Advance ``(rho0, m0)`` through the step sizes ``dts``; returns every state."""
    rho, m = [float(r) for r in rho0], [float(x) for x in m0]
    h = length / len(rho)
    visc = 2.0 * mu1 + mu2
    states = [(list(rho), list(m))]
    for dt in dts:
        rho, m = _step(rho, m, float(dt), h, gamma, visc)
        states.append((list(rho), list(m)))
    return states
