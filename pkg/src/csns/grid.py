"""Spatial and velocity grids on a box, boundary classification, and the
divergence-controlled extension of the boundary velocity.

Array layout conventions used throughout the package:

* spatial cell arrays have shape ``grid.shape`` (plus trailing component axes);
* phase-space arrays have shape ``grid.shape + vgrid.shape``;
* a boundary side is a pair ``(axis, side)`` with ``side`` 0 for the lower and
  1 for the upper face; face arrays keep the normal axis with length 1 so they
  broadcast against cell slices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ExtensionError

INFLOW = -1
TANGENTIAL = 0
OUTFLOW = 1

TAU_DIV = 1e-10
AXIS_NAMES = "xyz"

Side = tuple[int, int]


def side_name(side: Side) -> str:
    axis, s = side
    return f"{AXIS_NAMES[axis]}_{'lo' if s == 0 else 'hi'}"


def parse_side_name(name: str) -> Side:
    try:
        letter, which = name.split("_")
        return AXIS_NAMES.index(letter), {"lo": 0, "hi": 1}[which]
    except (ValueError, KeyError):
        raise ConfigError(f"unknown boundary side {name!r}; expected e.g. 'x_lo', 'y_hi'") from None


def axis_slice(ndim: int, axis: int, s) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


@dataclass(frozen=True)
class SpatialGrid:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    shape: tuple[int, ...]
    periodic: tuple[bool, ...]

    @property
    def dim(self) -> int:
        return len(self.shape)

    @cached_property
    def dx(self) -> tuple[float, ...]:
        return tuple((hi - lo) / n for lo, hi, n in zip(self.lower, self.upper, self.shape))

    @property
    def extents(self) -> tuple[float, ...]:
        return tuple(hi - lo for lo, hi in zip(self.lower, self.upper))

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    @property
    def ncells(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def centers(self) -> tuple[np.ndarray, ...]:
        return tuple(lo + (np.arange(n) + 0.5) * h for lo, n, h in zip(self.lower, self.shape, self.dx))

    @cached_property
    def mesh(self) -> np.ndarray:
        """Cell-center coordinates, shape ``shape + (dim,)``."""
        return np.stack(np.meshgrid(*self.centers, indexing="ij"), axis=-1)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    @property
    def sides(self) -> list[Side]:
        return [(a, s) for a in range(self.dim) if not self.periodic[a] for s in (0, 1)]

    def face_shape(self, axis: int) -> tuple[int, ...]:
        shp = list(self.shape)
        shp[axis] = 1
        return tuple(shp)

    def face_area(self, axis: int) -> float:
        return self.cell_volume / self.dx[axis]

    def normal(self, side: Side) -> np.ndarray:
        axis, s = side
        nu = np.zeros(self.dim)
        nu[axis] = -1.0 if s == 0 else 1.0
        return nu

    def face_centers(self, side: Side) -> np.ndarray:
        axis, s = side
        pts = self.mesh[axis_slice(self.dim + 1, axis, slice(0, 1))].copy()
        pts[..., axis] = self.lower[axis] if s == 0 else self.upper[axis]
        return pts

    def boundary_cells(self, side: Side) -> tuple:
        """Index tuple selecting the layer of cells adjacent to ``side``."""
        axis, s = side
        return axis_slice(self.dim, axis, slice(0, 1) if s == 0 else slice(-1, None))

    @cached_property
    def boundary_distance(self) -> np.ndarray:
        """Distance from each cell center to the nearest non-periodic face."""
        dist = np.full(self.shape, np.inf)
        for axis, s in self.sides:
            x = self.mesh[..., axis]
            d = x - self.lower[axis] if s == 0 else self.upper[axis] - x
            dist = np.minimum(dist, d)
        return dist

    @cached_property
    def boundary_cell_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for side in self.sides:
            mask[self.boundary_cells(side)] = True
        return mask


@dataclass(frozen=True)
class VelocityGrid:
    vmax: float
    shape: tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.shape)

    @cached_property
    def dv(self) -> tuple[float, ...]:
        return tuple(2.0 * self.vmax / n for n in self.shape)

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.dv))

    @property
    def ncells(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def centers(self) -> tuple[np.ndarray, ...]:
        # mirrored construction makes the v -> -v symmetry bitwise exact
        out = []
        for n, h in zip(self.shape, self.dv):
            pos = (np.arange(n // 2) + 0.5) * h
            out.append(np.concatenate([-pos[::-1], pos]))
        return tuple(out)

    @cached_property
    def faces(self) -> tuple[np.ndarray, ...]:
        """Interior cell-interface velocities per axis (``n - 1`` each)."""
        return tuple(0.5 * (c[:-1] + c[1:]) for c in self.centers)

    @cached_property
    def mesh(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.centers, indexing="ij"), axis=-1)

    @cached_property
    def speed(self) -> np.ndarray:
        return np.sqrt(np.sum(self.mesh**2, axis=-1))


def build_grids(
    extents: Sequence[Sequence[float]],
    cells: Sequence[int],
    vmax: float,
    v_cells: int | Sequence[int],
    periodic: Sequence[bool] | None = None,
) -> tuple[SpatialGrid, VelocityGrid]:
    """Validate the geometry block and construct the two tensor grids.

    ``extents`` is a list of ``(lower, upper)`` pairs, one per spatial axis;
    the velocity grid has the same dimension as the spatial one.
    """
    dim = len(extents)
    if dim not in (1, 2, 3):
        raise ConfigError(f"spatial dimension must be 1, 2 or 3, got {dim}")
    if len(cells) != dim:
        raise ConfigError(f"grid.cells has {len(cells)} entries for a {dim}-D domain")
    lower, upper = [], []
    for a, pair in enumerate(extents):
        lo, hi = (float(pair[0]), float(pair[1]))
        if not hi - lo > 0:
            raise ConfigError(f"domain axis {AXIS_NAMES[a]}: extent must be positive, got [{lo}, {hi}]")
        lower.append(lo)
        upper.append(hi)
    for a, n in enumerate(cells):
        if int(n) != n or n < 2:
            raise ConfigError(f"grid.cells[{a}] must be an integer >= 2, got {n}")
    if isinstance(v_cells, (int, np.integer)):
        v_cells = [int(v_cells)] * dim
    if len(v_cells) != dim:
        raise ConfigError(f"grid.v_cells has {len(v_cells)} entries, velocity dimension is {dim}")
    for a, n in enumerate(v_cells):
        if int(n) != n or n < 2 or n % 2:
            raise ConfigError(f"grid.v_cells[{a}] must be an even integer >= 2, got {n}")
    if not (np.isfinite(vmax) and vmax > 0):
        raise ConfigError(f"grid.v_max must be positive, got {vmax}")
    if periodic is None:
        periodic = [False] * dim
    if len(periodic) != dim:
        raise ConfigError(f"domain.periodic has {len(periodic)} entries for a {dim}-D domain")
    sgrid = SpatialGrid(tuple(lower), tuple(upper), tuple(int(n) for n in cells), tuple(bool(p) for p in periodic))
    vgrid = VelocityGrid(float(vmax), tuple(int(n) for n in v_cells))
    return sgrid, vgrid


FaceSpec = None | float | Sequence[float] | Callable | Mapping


def sample_face_vectors(grid: SpatialGrid, spec: FaceSpec) -> dict[Side, np.ndarray]:
    """Sample a boundary vector field on every face: ``{side: (face_shape, dim)}``.

    ``spec`` may be ``None`` (zero), a constant vector, a callable of the face
    coordinates, or a mapping from side names (``"x_lo"``...) to either of
    those; sides missing from the mapping fall back to its ``"default"`` entry.
    """
    out = {}
    for side in grid.sides:
        entry = spec
        if isinstance(spec, Mapping):
            entry = spec.get(side_name(side), spec.get("default"))
        shp = grid.face_shape(side[0]) + (grid.dim,)
        if entry is None:
            val = np.zeros(shp)
        elif callable(entry):
            val = np.broadcast_to(np.asarray(entry(grid.face_centers(side)), dtype=float), shp).copy()
        else:
            vec = np.atleast_1d(np.asarray(entry, dtype=float))
            if vec.shape != (grid.dim,):
                raise ConfigError(f"boundary vector for {side_name(side)} must have {grid.dim} components, got {vec.tolist()}")
            val = np.broadcast_to(vec, shp).copy()
        out[side] = val
    return out


def sample_face_scalars(grid: SpatialGrid, spec) -> dict[Side, np.ndarray]:
    out = {}
    for side in grid.sides:
        entry = spec
        if isinstance(spec, Mapping):
            entry = spec.get(side_name(side), spec.get("default"))
        shp = grid.face_shape(side[0])
        if entry is None:
            val = np.zeros(shp)
        elif callable(entry):
            val = np.broadcast_to(np.asarray(entry(grid.face_centers(side)), dtype=float), shp).copy()
        else:
            val = np.full(shp, float(entry))
        out[side] = val
    return out


@dataclass
class BoundaryTags:
    """Normal boundary velocity ``u_B . nu`` and the inflow/outflow/tangential tag per face."""

    normal_velocity: dict[Side, np.ndarray]
    tags: dict[Side, np.ndarray]
    tol: float

    def counts(self) -> dict[str, int]:
        allt = np.concatenate([t.ravel() for t in self.tags.values()]) if self.tags else np.zeros(0, int)
        return {
            "inflow": int(np.sum(allt == INFLOW)),
            "outflow": int(np.sum(allt == OUTFLOW)),
            "tangential": int(np.sum(allt == TANGENTIAL)),
            "total": int(allt.size),
        }

    def has_inflow(self) -> bool:
        return any(np.any(t == INFLOW) for t in self.tags.values())


def classify_boundary(grid: SpatialGrid, u_B: FaceSpec | dict[Side, np.ndarray]) -> BoundaryTags:
    """Tag boundary faces by the sign of ``u_B . nu``.

    Ties within ``1e-12 * max|u_B|`` resolve to tangential, so ``u_B = 0``
    leaves the inflow set empty.
    """
    if isinstance(u_B, dict) and all(isinstance(k, tuple) for k in u_B):
        faces = u_B
    else:
        faces = sample_face_vectors(grid, u_B)
    umax = max((float(np.max(np.linalg.norm(v, axis=-1))) for v in faces.values()), default=0.0)
    tol = 1e-12 * umax
    un, tags = {}, {}
    for side, vals in faces.items():
        n = vals @ grid.normal(side)
        un[side] = n
        t = np.full(n.shape, TANGENTIAL, dtype=int)
        t[n < -tol] = INFLOW
        t[n > tol] = OUTFLOW
        tags[side] = t
    return BoundaryTags(un, tags, tol)


def velocity_normal(vgrid: VelocityGrid, grid: SpatialGrid, side: Side) -> np.ndarray:
    """``v . nu`` on the velocity mesh for a boundary side."""
    axis, s = side
    vn = vgrid.mesh[..., axis]
    return -vn if s == 0 else vn


def sigma_masks(vgrid: VelocityGrid, grid: SpatialGrid, side: Side) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks over velocity cells: (incoming Sigma^-, outgoing Sigma^+)."""
    vn = velocity_normal(vgrid, grid, side)
    tol = 1e-12 * vgrid.vmax
    return vn < -tol, vn > tol


def face_values(grid: SpatialGrid, axis: int, cells: np.ndarray, low=None, high=None) -> np.ndarray:
    """Values on the ``n + 1`` faces normal to ``axis``.

    Interior faces take the neighbour average; boundary faces take ``low`` /
    ``high`` (face-shaped arrays). Periodic axes wrap, so the first and last
    face coincide.
    """
    nd = cells.ndim
    first = cells[axis_slice(nd, axis, slice(0, 1))]
    last = cells[axis_slice(nd, axis, slice(-1, None))]
    inner = 0.5 * (cells[axis_slice(nd, axis, slice(None, -1))] + cells[axis_slice(nd, axis, slice(1, None))])
    if grid.periodic[axis]:
        wrap = 0.5 * (first + last)
        return np.concatenate([wrap, inner, wrap], axis=axis)
    return np.concatenate([np.broadcast_to(low, first.shape), inner, np.broadcast_to(high, last.shape)], axis=axis)


def divergence(grid: SpatialGrid, face_normal: Sequence[np.ndarray]) -> np.ndarray:
    """Finite-volume divergence from per-axis face normal components."""
    div = np.zeros(grid.shape)
    for a, F in enumerate(face_normal):
        div = div + np.diff(F, axis=a) / grid.dx[a]
    return div


def velocity_divergence(grid: SpatialGrid, u: np.ndarray, u_B: dict[Side, np.ndarray]) -> np.ndarray:
    """Discrete ``div u`` for a cell field with Dirichlet face values ``u_B``."""
    faces = []
    for a in range(grid.dim):
        low = u_B[(a, 0)][..., a] if not grid.periodic[a] else None
        high = u_B[(a, 1)][..., a] if not grid.periodic[a] else None
        faces.append(face_values(grid, a, u[..., a], low, high))
    return divergence(grid, faces)


def cutoff(s: np.ndarray) -> np.ndarray:
    """Smooth decreasing profile with value 1 at 0 and support in [0, 1)."""
    s = np.asarray(s, dtype=float)
    return np.where(s < 1.0, np.cos(0.5 * np.pi * np.clip(s, 0.0, 1.0)) ** 2, 0.0)


def build_extension(grid: SpatialGrid, u_B: dict[Side, np.ndarray], h: float, tau_div: float = TAU_DIV) -> np.ndarray:
    """Extend boundary velocity to the interior with non-negative divergence near the wall.

    The field is the area-weighted mean boundary velocity plus, for each face,
    the deviation from that mean multiplied by a cutoff in the wall distance.
    Constant data is reproduced exactly. The divergence constraint is checked
    cell by cell inside the layer of width ``h``.
    """
    if grid.sides:
        min_extent = min(grid.extents[a] for a, _ in grid.sides)
        if not 0 < h < 0.5 * min_extent:
            raise ConfigError(f"boundary layer width h={h} must lie in (0, {0.5 * min_extent})")
    u_inf = np.zeros(grid.shape + (grid.dim,))
    if not grid.sides:
        return u_inf
    ref = next(iter(u_B.values())).reshape(-1, grid.dim)[0]
    if all(np.all(vals == ref) for vals in u_B.values()):
        u_inf[...] = ref
        return u_inf
    total, weight = np.zeros(grid.dim), 0.0
    for side, vals in u_B.items():
        area = grid.face_area(side[0])
        total += vals.reshape(-1, grid.dim).sum(axis=0) * area
        weight += area * vals.reshape(-1, grid.dim).shape[0]
    mean = total / weight
    u_inf[...] = mean
    for side, vals in u_B.items():
        axis, s = side
        x = grid.mesh[..., axis]
        dist = x - grid.lower[axis] if s == 0 else grid.upper[axis] - x
        u_inf = u_inf + cutoff(dist / h)[..., None] * (vals - mean)
    div = velocity_divergence(grid, u_inf, u_B)
    layer = grid.boundary_distance < h
    worst = float(np.max(np.where(layer, -div, -np.inf)))
    if worst > tau_div:
        raise ExtensionError(
            f"extension violates div u_inf >= -{tau_div:g} in the boundary layer (max violation {worst:.3e})",
            max_violation=worst,
        )
    umax = max(float(np.max(np.linalg.norm(v, axis=-1))) for v in u_B.values())
    excess = float(np.max(np.linalg.norm(u_inf, axis=-1))) - umax
    if excess > 1e-12 * max(umax, 1.0):
        raise ExtensionError(f"extension exceeds max|u_B| by {excess:.3e}", max_violation=excess)
    return u_inf


@dataclass
class BoundaryData:
    """Boundary data on the box: wall velocity, inflow density, inflow trace, extension."""

    u_B: dict[Side, np.ndarray]
    rho_B: dict[Side, np.ndarray]
    tags: BoundaryTags
    u_inf: np.ndarray
    h: float
    g: Callable | None = None
    g_sup: float = 0.0
    meta: dict = field(default_factory=dict)

    def sample_g(self, grid: SpatialGrid, vgrid: VelocityGrid, side: Side, t: float) -> np.ndarray:
        """Inflow trace on ``side`` sampled on incoming velocity cells, zero elsewhere.

        Shape is ``face_shape + vgrid.shape``.
        """
        shp = grid.face_shape(side[0]) + vgrid.shape
        if self.g is None:
            return np.zeros(shp)
        d = grid.dim
        x = grid.face_centers(side).reshape(grid.face_shape(side[0]) + (1,) * d + (d,))
        v = vgrid.mesh.reshape((1,) * d + vgrid.shape + (d,))
        vals = np.broadcast_to(np.asarray(self.g(t, x, v, side), dtype=float), shp)
        incoming, _ = sigma_masks(vgrid, grid, side)
        out = np.where(incoming, vals, 0.0)
        if np.any(out < 0):
            raise ConfigError(f"inflow trace g must be non-negative (side {side_name(side)})")
        return out


def make_boundary(
    grid: SpatialGrid,
    u_B: FaceSpec = None,
    rho_B=1.0,
    h: float | None = None,
    g: Callable | None = None,
    g_sup: float = 0.0,
) -> BoundaryData:
    faces = sample_face_vectors(grid, u_B)
    tags = classify_boundary(grid, faces)
    rho = sample_face_scalars(grid, rho_B)
    for side in grid.sides:
        bad = (tags.tags[side] == INFLOW) & ~(rho[side] > 0)
        if np.any(bad):
            raise ConfigError(f"rho_B must be positive on inflow faces ({side_name(side)})")
    if h is None:
        h = 0.25 * min((grid.extents[a] for a, _ in grid.sides), default=1.0)
    u_inf = build_extension(grid, faces, h)
    return BoundaryData(faces, rho, tags, u_inf, h, g, g_sup)


def grid_summary(grid: SpatialGrid, vgrid: VelocityGrid, tags: BoundaryTags | None = None) -> dict:
    """JSON-serialisable description of the grids and the face tags."""
    out = {
        "dim": grid.dim,
        "lower": list(grid.lower),
        "upper": list(grid.upper),
        "cells": list(grid.shape),
        "periodic": list(grid.periodic),
        "dx": list(grid.dx),
        "cell_volume": grid.cell_volume,
        "v_max": vgrid.vmax,
        "v_cells": list(vgrid.shape),
        "dv": list(vgrid.dv),
        "phase_cells": grid.ncells * vgrid.ncells,
    }
    if tags is not None:
        names = {INFLOW: "inflow", OUTFLOW: "outflow", TANGENTIAL: "tangential"}
        out["faces"] = {
            side_name(side): [names[int(t)] for t in tags.tags[side].ravel()] for side in grid.sides
        }
        out["face_counts"] = tags.counts()
    return out
