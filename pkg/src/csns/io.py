"""Artifact formats: binary snapshots with JSON sidecars, CSV tables, JSON manifests.

Snapshots store ``f``, ``rho`` and ``m`` back to back as little-endian float64
in one ``.bin`` file; the sidecar records shapes, byte offsets, time, step and
the grid summary. Nothing written here carries timestamps or host details, so
identical runs produce identical files.
"""

from __future__ import annotations

import csv
import json
import subprocess
from pathlib import Path

import numpy as np

from .coupling import CoupledState
from .fluid import FluidField
from .grid import SpatialGrid, VelocityGrid, grid_summary

MANIFEST_VERSION = 1
_DTYPE = np.dtype("<f8")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path: Path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def read_json(path: Path):
    return json.loads(Path(path).read_text())


def snapshot_name(step: int) -> str:
    return f"snap_{step:06d}"


def write_snapshot(directory: Path, state: CoupledState, grid: SpatialGrid, vgrid: VelocityGrid) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    base = snapshot_name(state.step)
    arrays = {"f": state.f, "rho": state.fluid.rho, "m": state.fluid.m}
    layout, offset = {}, 0
    with open(directory / f"{base}.bin", "wb") as fh:
        for key, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype=_DTYPE)
            fh.write(data.tobytes())
            layout[key] = {"shape": list(data.shape), "offset": offset}
            offset += data.nbytes
    sidecar = {"t": state.t, "step": state.step, "dtype": "<f8", "arrays": layout, "grid": grid_summary(grid, vgrid)}
    write_json(directory / f"{base}.json", sidecar)
    return directory / f"{base}.json"


def read_snapshot(sidecar_path: Path) -> CoupledState:
    sidecar_path = Path(sidecar_path)
    meta = read_json(sidecar_path)
    raw = (sidecar_path.with_suffix(".bin")).read_bytes()
    out = {}
    for key, spec in meta["arrays"].items():
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        out[key] = np.frombuffer(raw, dtype=_DTYPE, count=count, offset=spec["offset"]).reshape(spec["shape"]).astype(float)
    return CoupledState(out["f"], FluidField(out["rho"], out["m"]), float(meta["t"]), int(meta["step"]))


def list_snapshots(directory: Path) -> list[Path]:
    return sorted(Path(directory).glob("snap_*.json"))


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def git_describe() -> str:
    """``git describe`` of the working tree the package was loaded from, or ``"unknown"``."""
    try:
        res = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return res.stdout.strip() if res.returncode == 0 and res.stdout.strip() else "unknown"
