"""Velocity-consensus diagnostics of the particle distribution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import PreconditionError
from ..grid import SpatialGrid, VelocityGrid


@dataclass(frozen=True)
class FlockingMetrics:
    mean_velocity: np.ndarray
    variance: float
    momentum_spread: float


def flocking_metrics(f: np.ndarray, grid: SpatialGrid, vgrid: VelocityGrid) -> FlockingMetrics:
    """Mean velocity ``J/M``, velocity variance ``sum |v - mean|^2 f / M`` and the
    density-weighted spread of the local mean velocities around the global one."""
    d = grid.dim
    vaxes = tuple(range(d, 2 * d))
    w = grid.cell_volume * vgrid.cell_volume
    M = float(f.sum()) * w
    if not M > 0:
        raise PreconditionError("flocking metrics are undefined for zero total mass")
    mean = np.array([float((f * vgrid.mesh[..., a]).sum()) * w for a in range(d)]) / M
    r2 = np.sum((vgrid.mesh - mean) ** 2, axis=-1)
    var = float((f.reshape((-1,) + vgrid.shape).sum(axis=0) * r2).sum()) * w / M
    n = f.sum(axis=vaxes) * vgrid.cell_volume
    j = np.stack([(f * vgrid.mesh[..., a]).sum(axis=vaxes) for a in range(d)], axis=-1) * vgrid.cell_volume
    local = np.where((n > 0)[..., None], j / np.where(n > 0, n, 1.0)[..., None], mean)
    spread = float((n * np.sum((local - mean) ** 2, axis=-1)).sum()) * grid.cell_volume / M
    return FlockingMetrics(mean, var, spread)
