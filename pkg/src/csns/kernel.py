"""Communication kernels and the nonlocal alignment operator.

The alignment force ``L[f](x, v) = E(x) - q(x) v`` is evaluated through two
spatial moment fields,

    q(x) = sum_y K(x, y) M(y),     E(x) = sum_y K(x, y) J(y),

where ``M(y)`` and ``J(y)`` are the mass and momentum carried by spatial cell
``y``. All sums are midpoint quadratures on the phase grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import parallel
from .errors import ConfigError, SchemeFailure
from .grid import SpatialGrid, VelocityGrid


@dataclass
class KernelSpec:
    """A kernel ``K(x, y) >= 0`` with its sup bound and Lipschitz constant in ``x``.

    ``evaluate`` takes broadcastable coordinate arrays of shape ``(..., dim)``.
    """

    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    k_max: float
    lipschitz: float
    boundary_vanishing: bool = False
    symmetric: bool = True
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def matrix(self, grid: SpatialGrid) -> np.ndarray:
        """Kernel sampled on cell centers, shape ``(ncells, ncells)``."""
        pts = grid.mesh.reshape(-1, grid.dim)
        K = np.asarray(self.evaluate(pts[:, None, :], pts[None, :, :]), dtype=float)
        K = np.broadcast_to(K, (pts.shape[0], pts.shape[0])).copy()
        if self.boundary_vanishing:
            # K(x, .) = 0 on boundary cells, applied on both arguments to keep symmetry
            keep = (~grid.boundary_cell_mask).ravel().astype(float)
            K *= keep[:, None] * keep[None, :]
        return K


def constant_kernel(strength: float = 1.0, boundary_vanishing: bool = False) -> KernelSpec:
    k0 = float(strength)
    return KernelSpec(
        lambda x, y: np.full(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]), k0),
        k_max=k0,
        lipschitz=0.0,
        boundary_vanishing=boundary_vanishing,
        name="constant",
        params={"strength": k0},
    )


def gaussian_kernel(strength: float = 1.0, width: float = 0.5, boundary_vanishing: bool = False) -> KernelSpec:
    k0, s = float(strength), float(width)
    return KernelSpec(
        lambda x, y: k0 * np.exp(-np.sum((x - y) ** 2, axis=-1) / s**2),
        k_max=k0,
        lipschitz=k0 * np.sqrt(2.0) * np.exp(-0.5) / s,
        boundary_vanishing=boundary_vanishing,
        name="gaussian",
        params={"strength": k0, "width": s},
    )


def exponential_kernel(strength: float = 1.0, width: float = 1.0, boundary_vanishing: bool = False) -> KernelSpec:
    k0, s = float(strength), float(width)
    return KernelSpec(
        lambda x, y: k0 * np.exp(-np.sqrt(np.sum((x - y) ** 2, axis=-1)) / s),
        k_max=k0,
        lipschitz=k0 / s,
        boundary_vanishing=boundary_vanishing,
        name="exponential",
        params={"strength": k0, "width": s},
    )


def bump_kernel(strength: float = 1.0, width: float = 0.5, boundary_vanishing: bool = False) -> KernelSpec:
    """Compactly supported ``k0 (1 - r^2/R^2)^2`` for ``r < R``."""
    k0, R = float(strength), float(width)

    def ev(x, y):
        r2 = np.sum((x - y) ** 2, axis=-1) / R**2
        return np.where(r2 < 1.0, k0 * (1.0 - r2) ** 2, 0.0)

    return KernelSpec(
        ev,
        k_max=k0,
        lipschitz=k0 * 8.0 / (3.0 * np.sqrt(3.0) * R),
        boundary_vanishing=boundary_vanishing,
        name="bump",
        params={"strength": k0, "width": R},
    )


def zero_kernel() -> KernelSpec:
    return KernelSpec(
        lambda x, y: np.zeros(np.broadcast_shapes(x.shape[:-1], y.shape[:-1])),
        k_max=0.0,
        lipschitz=0.0,
        name="zero",
    )


KERNEL_FAMILIES = {
    "constant": constant_kernel,
    "gaussian": gaussian_kernel,
    "exponential": exponential_kernel,
    "bump": bump_kernel,
}


def make_kernel(family: str, **params) -> KernelSpec:
    if family == "zero":
        return zero_kernel()
    try:
        factory = KERNEL_FAMILIES[family]
    except KeyError:
        raise ConfigError(f"unknown kernel family {family!r}; choose from {sorted(KERNEL_FAMILIES) + ['zero']}") from None
    return factory(**params)


@dataclass
class AlignmentMoments:
    """Per-cell coupling fields: ``q`` (shape ``grid.shape``) and ``E`` (``grid.shape + (dim,)``)."""

    q: np.ndarray
    E: np.ndarray

    def force(self, vgrid: VelocityGrid) -> np.ndarray:
        """``L[f](x, v) = E(x) - q(x) v`` on the phase grid, trailing component axis."""
        d = self.q.ndim
        E = self.E.reshape(self.q.shape + (1,) * d + (d,))
        q = self.q.reshape(self.q.shape + (1,) * d + (1,))
        return E - q * vgrid.mesh


def cell_mass_momentum(f: np.ndarray, grid: SpatialGrid, vgrid: VelocityGrid) -> tuple[np.ndarray, np.ndarray]:
    """Mass and momentum carried by each spatial cell, flattened to ``(ncells,)`` / ``(ncells, dim)``."""
    d = grid.dim
    vaxes = tuple(range(d, 2 * d))
    w = grid.cell_volume * vgrid.cell_volume
    mass = f.sum(axis=vaxes) * w
    mom = np.stack([(f * vgrid.mesh[..., a]).sum(axis=vaxes) for a in range(d)], axis=-1) * w
    return mass.reshape(-1), mom.reshape(-1, d)


def _kernel_dot(K: np.ndarray, vals: np.ndarray) -> np.ndarray:
    # row-wise pairwise reduction; no BLAS so the result is thread-count independent
    n = K.shape[0]
    if vals.ndim == 1:
        out = np.empty(n)
        return parallel.map_rows(lambda i0, i1: (K[i0:i1] * vals[None, :]).sum(axis=1), n, out)
    out = np.empty((n, vals.shape[1]))
    return parallel.map_rows(
        lambda i0, i1: np.stack([(K[i0:i1] * vals[None, :, c]).sum(axis=1) for c in range(vals.shape[1])], axis=-1),
        n,
        out,
    )


def compute_moments(
    f: np.ndarray, K: KernelSpec | np.ndarray, grid: SpatialGrid, vgrid: VelocityGrid
) -> AlignmentMoments:
    """Kernel-weighted mass ``q`` and momentum ``E`` per spatial cell."""
    Kmat = K.matrix(grid) if isinstance(K, KernelSpec) else K
    mass, mom = cell_mass_momentum(f, grid, vgrid)
    q = _kernel_dot(Kmat, mass).reshape(grid.shape)
    E = _kernel_dot(Kmat, mom).reshape(grid.shape + (grid.dim,))
    return AlignmentMoments(q, E)


def alignment_momentum_exchange(
    f: np.ndarray, moments: AlignmentMoments, grid: SpatialGrid, vgrid: VelocityGrid
) -> np.ndarray:
    """Total momentum injected by the alignment force, ``sum f L[f]``.

    For a symmetric kernel this vanishes up to round-off.
    """
    mass, mom = cell_mass_momentum(f, grid, vgrid)
    q = moments.q.reshape(-1)
    E = moments.E.reshape(-1, grid.dim)
    return (mass[:, None] * E).sum(axis=0) - (mom * q[:, None]).sum(axis=0)


def kernel_dissipation(
    f: np.ndarray, K: KernelSpec | np.ndarray, grid: SpatialGrid, vgrid: VelocityGrid, k_max: float | None = None
) -> float:
    """``1/2 sum K(x,y) f(x,v) f(y,w) |w - v|^2`` by midpoint quadrature.

    Velocities are centred on the global mean first, which removes the
    cancellation between the mass-energy and momentum-momentum products.
    """
    Kmat = K.matrix(grid) if isinstance(K, KernelSpec) else K
    if k_max is None:
        k_max = K.k_max if isinstance(K, KernelSpec) else float(np.max(np.abs(Kmat), initial=0.0))
    d = grid.dim
    vaxes = tuple(range(d, 2 * d))
    w = grid.cell_volume * vgrid.cell_volume
    mass = (f.sum(axis=vaxes) * w).reshape(-1)
    total = mass.sum()
    if total <= 0:
        return 0.0
    mean = np.array([(f * vgrid.mesh[..., a]).sum() * w for a in range(d)]) / total
    vc = vgrid.mesh - mean
    mom = np.stack([(f * vc[..., a]).sum(axis=vaxes) * w for a in range(d)], axis=-1).reshape(-1, d)
    energy = ((f * np.sum(vc**2, axis=-1)).sum(axis=vaxes) * w).reshape(-1)
    Km = _kernel_dot(Kmat, mass)
    Ke = _kernel_dot(Kmat, energy)
    Kj = _kernel_dot(Kmat, mom)
    val = 0.5 * (float((energy * Km).sum()) + float((mass * Ke).sum())) - float((mom * Kj).sum())
    scale = max(k_max, 1e-300) * total * float(energy.sum() + (mass * np.sum(mean**2)).sum())
    if val < -1e-14 * scale:
        raise SchemeFailure(f"kernel dissipation is negative ({val:.3e}, scale {scale:.3e})")
    return max(val, 0.0)
