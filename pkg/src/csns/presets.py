"""Named scenario presets.

Each preset is a function returning a raw config tree (the same shape a TOML
file would parse to), so overrides and validation apply to presets and files
alike.
"""

from __future__ import annotations

_WALLS_1D = {"u_B": [0.0], "rho_B": 1.0}


def sealed_equilibrium() -> dict:
    # Constant kernel k0 = 1/2 and unit mass give q = 1/2; the kinetic steady
    # state is then the Maxwellian at rest with temperature 1 / (1 + q).
    T_eq = 1.0 / 1.5
    return {
        "name": "sealed-equilibrium",
        "domain": {"extents": [[0.0, 1.0]]},
        "grid": {"cells": [16], "v_cells": 32},
        "regularization": {"v_max": 8.0},
        "kernel": {"family": "constant", "strength": 0.5},
        "initial": {
            "fluid": {"profile": "uniform", "rho": 1.0, "u": [0.0]},
            "kinetic": {"profile": "maxwellian", "density": 1.0, "mean": [0.0], "temperature": T_eq},
        },
        "boundary": {**_WALLS_1D, "g": {"kind": "maxwellian", "density": 1.0, "mean": [0.0], "temperature": T_eq}},
        "time": {"T": 0.05, "dt": 5e-4},
        "checks": {"steady": 1e-9, "drag": True},
    }


def flocking_decay() -> dict:
    return {
        "name": "flocking-decay",
        "domain": {"extents": [[0.0, 1.0]], "periodic": [True]},
        "grid": {"cells": [16], "v_cells": 64},
        "regularization": {"v_max": 8.0},
        "kernel": {"family": "constant", "strength": 1.0},
        "initial": {
            "fluid": {"profile": "uniform", "rho": 1.0, "u": [0.0]},
            "kinetic": {"profile": "bimodal", "density": 1.0, "speed": 1.5, "temperature": 0.1},
        },
        "time": {"T": 0.5, "dt": 2.5e-3},
        "coupling": {"fluid_mode": "frozen"},
        "checks": {"variance_monotone": True},
    }


def inflow_channel() -> dict:
    return {
        "name": "inflow-channel",
        "domain": {"extents": [[0.0, 1.0]]},
        "grid": {"cells": [32], "v_cells": 32},
        "regularization": {"eps": 0.01, "v_max": 8.0},
        "kernel": {"family": "gaussian", "strength": 1.0, "width": 0.5, "boundary_vanishing": True},
        "initial": {
            "fluid": {"profile": "uniform", "rho": 1.0, "u": [1.0]},
            "kinetic": {"profile": "maxwellian", "density": 0.5, "mean": [1.0], "temperature": 1.0},
        },
        "boundary": {
            "u_B": [1.0],
            "rho_B": 1.0,
            "g": {"kind": "maxwellian", "density": 0.5, "mean": [1.0], "temperature": 1.0},
        },
        "time": {"T": 0.1, "cfl": 0.5},
        "checks": {"drag": True},
    }


def riemann_fluid() -> dict:
    return {
        "name": "riemann-fluid",
        "domain": {"extents": [[0.0, 1.0]]},
        "grid": {"cells": [100], "v_cells": 2},
        "physics": {"mu1": 1e-3},
        "regularization": {"v_max": 1.0},
        "initial": {
            "fluid": {"profile": "riemann", "rho_left": 1.0, "rho_right": 0.125, "x0": 0.5},
            "kinetic": {"profile": "zero"},
        },
        "boundary": dict(_WALLS_1D),
        "time": {"T": 0.1, "cfl": 0.5},
    }


def coupled_smoke() -> dict:
    return {
        "name": "coupled-smoke",
        "domain": {"extents": [[0.0, 1.0], [0.0, 1.0]]},
        "grid": {"cells": [8, 8], "v_cells": 8},
        "regularization": {"v_max": 4.0},
        "kernel": {"family": "gaussian", "strength": 1.0, "width": 0.5},
        "initial": {
            "fluid": {"profile": "sine", "rho": 1.0, "amplitude": 0.1},
            "kinetic": {"profile": "maxwellian", "density": 0.5, "mean": [0.2, -0.1], "temperature": 1.0},
        },
        "boundary": {"u_B": [0.0, 0.0], "rho_B": 1.0, "g": {"kind": "maxwellian", "density": 0.5, "temperature": 1.0}},
        "time": {"T": 0.01, "dt": 1e-3},
    }


def _continuation_base(name: str) -> dict:
    return {
        "name": name,
        "domain": {"extents": [[0.0, 1.0]]},
        "grid": {"cells": [32], "v_cells": 16},
        "physics": {"mu1": 0.1},
        "regularization": {"v_max": 6.0},
        "kernel": {"family": "gaussian", "strength": 1.0, "width": 0.5},
        "initial": {
            "fluid": {"profile": "sine", "rho": 1.0, "amplitude": 0.3, "u": [0.0]},
            "kinetic": {"profile": "maxwellian", "density": 0.5, "mean": [0.3], "temperature": 1.0},
        },
        "boundary": {**_WALLS_1D, "g": {"kind": "maxwellian", "density": 0.5, "temperature": 1.0}},
        "time": {"T": 0.05, "dt": 5e-4},
        "output": {"snapshots": False},
    }


def continuation_epsilon() -> dict:
    raw = _continuation_base("continuation-epsilon")
    raw["sweep"] = {"parameter": "eps", "values": [1e-2, 1e-3, 1e-4]}
    return raw


def continuation_delta() -> dict:
    raw = _continuation_base("continuation-delta")
    raw["regularization"].update({"eps": 1e-3, "beta": 5.0, "delta": 1e-1})
    raw["sweep"] = {"parameter": "delta", "values": [1e-1, 1e-2, 1e-3, 0.0]}
    return raw


def continuation_N() -> dict:
    raw = _continuation_base("continuation-N")
    raw["sweep"] = {"parameter": "N", "values": [0.05, 0.1, 2.0, 4.0, "inf"]}
    return raw


PRESETS = {
    "sealed-equilibrium": sealed_equilibrium,
    "flocking-decay": flocking_decay,
    "inflow-channel": inflow_channel,
    "riemann-fluid": riemann_fluid,
    "coupled-smoke": coupled_smoke,
    "continuation-epsilon": continuation_epsilon,
    "continuation-delta": continuation_delta,
    "continuation-N": continuation_N,
}
