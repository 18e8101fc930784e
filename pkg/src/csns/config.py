"""Run configuration: a TOML key tree validated by pydantic models.

Unknown keys are rejected everywhere. Validation errors are re-raised as
:class:`~csns.errors.ConfigError` with the dotted path of the offending field.
Overrides ``key.path=value`` are parsed as TOML values and applied to the raw
tree before validation, so an override is the same as editing the file.
"""

from __future__ import annotations

import copy
import json
import math
import sys
import warnings
from pathlib import Path
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

Vector = list[float]
FaceVector = Union[Vector, dict[str, Vector]]
FaceScalar = Union[float, dict[str, float]]


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomainBlock(_Block):
    extents: list[tuple[float, float]] = Field(default_factory=lambda: [(0.0, 1.0)])
    periodic: Optional[list[bool]] = None


class GridBlock(_Block):
    cells: list[int] = Field(default_factory=lambda: [16])
    v_cells: Union[int, list[int]] = 32


class PhysicsBlock(_Block):
    gamma: float = 5.0 / 3.0
    mu1: float = 1.0
    mu2: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        if not self.gamma > 1:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")
        if not self.mu1 > 0:
            raise ValueError(f"mu1 must be positive, got {self.mu1}")
        if not 2 * self.mu1 + 3 * self.mu2 >= 0:
            raise ValueError("2*mu1 + 3*mu2 must be >= 0")
        return self


class RegularizationBlock(_Block):
    eps: float = Field(0.0, ge=0)
    delta: float = Field(0.0, ge=0)
    beta: Optional[float] = None
    N: Optional[float] = None  # velocity truncation level; omitted or "inf" means none
    v_max: float = Field(8.0, gt=0)
    kappa0: int = Field(5, ge=5)

    @field_validator("N", mode="before")
    @classmethod
    def _inf(cls, v):
        if isinstance(v, str) and v.lower() in ("inf", "infinity", "none"):
            return None
        return v

    @model_validator(mode="after")
    def _check(self):
        if self.N is not None:
            if math.isinf(self.N):
                self.N = None
            elif not self.N > 0:
                raise ValueError(f"N must be positive, got {self.N}")
        return self


class KernelBlock(_Block):
    family: Literal["constant", "gaussian", "exponential", "bump", "zero"] = "zero"
    strength: float = Field(1.0, ge=0)
    width: Optional[float] = Field(None, gt=0)
    boundary_vanishing: bool = False


class FluidInit(_Block):
    profile: Literal["uniform", "riemann", "sine", "random"] = "uniform"
    rho: float = Field(1.0, gt=0)
    u: Optional[Vector] = None
    rho_left: float = Field(1.0, gt=0)
    rho_right: float = Field(0.125, gt=0)
    u_left: Optional[Vector] = None
    u_right: Optional[Vector] = None
    x0: float = 0.5
    amplitude: float = 0.1
    seed: int = 0


class KineticInit(_Block):
    profile: Literal["zero", "maxwellian", "bimodal", "random"] = "maxwellian"
    density: float = Field(1.0, ge=0)
    mean: Optional[Vector] = None
    temperature: float = Field(1.0, gt=0)
    amplitude: float = 0.0
    speed: float = 1.5
    seed: int = 0


class InitialBlock(_Block):
    fluid: FluidInit = Field(default_factory=FluidInit)
    kinetic: KineticInit = Field(default_factory=KineticInit)


class InflowTrace(_Block):
    kind: Literal["none", "maxwellian"] = "none"
    density: float = Field(1.0, ge=0)
    mean: Optional[Vector] = None
    temperature: float = Field(1.0, gt=0)


class BoundaryBlock(_Block):
    u_B: Optional[FaceVector] = None
    rho_B: FaceScalar = 1.0
    h: Optional[float] = Field(None, gt=0)
    g: InflowTrace = Field(default_factory=InflowTrace)


class TimeBlock(_Block):
    T: float = Field(0.1, ge=0)
    dt: Optional[float] = None
    cfl: Optional[float] = None
    report_every: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.cfl is not None and not 0 < self.cfl <= 1:
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.dt is None and self.cfl is None:
            self.cfl = 0.5
        if self.dt is not None and self.cfl is not None:
            raise ValueError("give either dt or cfl, not both")
        return self


class CouplingBlock(_Block):
    tol: float = Field(1e-8, gt=0)
    max_iter: int = Field(50, ge=1)
    damping: float = Field(1.0, gt=0, le=1)
    retry_damping: float = Field(0.5, gt=0, le=1)
    max_retries: int = Field(4, ge=0)
    fluid_mode: Literal["coupled", "frozen"] = "coupled"
    implicit_velocity: bool = True


class OutputBlock(_Block):
    directory: Optional[str] = None
    snapshots: bool = True
    ledger: bool = True


class ChecksBlock(_Block):
    mass_balance: bool = True
    positivity: bool = True
    linf: bool = True
    density_bounds: bool = True
    drag: bool = False
    energy: bool = True
    energy_constant: float = Field(1.0, ge=0)  # C_E in tol_E = C_E (dt + dx + dv) scale
    steady: Optional[float] = None  # if set: max |state(T) - state(0)| must stay below this
    variance_monotone: bool = False


class SweepLeg(_Block):
    eps: Optional[float] = None
    delta: Optional[float] = None
    N: Optional[Union[float, str]] = None
    v_max: Optional[float] = None


class SweepBlock(_Block):
    parameter: Optional[Literal["eps", "delta", "N", "v_max"]] = None
    values: Optional[list[Union[float, str]]] = None
    legs: Optional[list[SweepLeg]] = None

    def schedule(self) -> list[dict]:
        if self.legs:
            return [{k: v for k, v in leg.model_dump().items() if v is not None} for leg in self.legs]
        if self.parameter and self.values:
            return [{self.parameter: v} for v in self.values]
        return []


class RunConfig(_Block):
    name: str = "run"
    domain: DomainBlock = Field(default_factory=DomainBlock)
    grid: GridBlock = Field(default_factory=GridBlock)
    physics: PhysicsBlock = Field(default_factory=PhysicsBlock)
    regularization: RegularizationBlock = Field(default_factory=RegularizationBlock)
    kernel: KernelBlock = Field(default_factory=KernelBlock)
    initial: InitialBlock = Field(default_factory=InitialBlock)
    boundary: BoundaryBlock = Field(default_factory=BoundaryBlock)
    time: TimeBlock = Field(default_factory=TimeBlock)
    coupling: CouplingBlock = Field(default_factory=CouplingBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)
    checks: ChecksBlock = Field(default_factory=ChecksBlock)
    sweep: SweepBlock = Field(default_factory=SweepBlock)

    @model_validator(mode="after")
    def _cross(self):
        d = len(self.domain.extents)
        if len(self.grid.cells) != d:
            raise ValueError(f"grid.cells has {len(self.grid.cells)} entries for a {d}-D domain")
        reg = self.regularization
        if reg.delta > 0:
            bound = max(self.physics.gamma, 4.5)
            if reg.beta is None or not reg.beta > bound:
                raise ValueError(f"regularization.beta must satisfy beta > max(gamma, 9/2) = {bound:g} when delta > 0 (got {reg.beta})")
        return self

    def as_dict(self) -> dict:
        return self.model_dump(mode="json")


def _format_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        msg = e["msg"].removeprefix("Value error, ")
        lines.append(f"{path}: {msg}")
    return "; ".join(lines)


def parse_value(text: str) -> Any:
    """Interpret an override value as TOML; bare words fall back to strings."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides: list[str] | None) -> dict:
    out = copy.deepcopy(raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key}: {p} is not a table")
            node = nxt
        node[parts[-1]] = parse_value(text.strip())
    return out


def validate(raw: dict) -> RunConfig:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cfg = RunConfig.model_validate(raw)
    except ValidationError as err:
        raise ConfigError(_format_error(err)) from None
    if cfg.physics.gamma <= 1.5:
        warnings.warn(f"physics.gamma={cfg.physics.gamma} <= 3/2 is outside the existence theory's range", stacklevel=2)
    return cfg


def read_raw(path: str | Path) -> dict:
    """Read a TOML or JSON config, or the ``config`` entry of a run manifest."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    text = p.read_text()
    try:
        if p.suffix == ".json":
            data = json.loads(text)
            return data["config"] if "config" in data and "manifest_version" in data else data
        return tomllib.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot parse {p}: {err}") from None


def load_config(source: str | Path | dict, overrides: list[str] | None = None) -> RunConfig:
    """Load a config from a path, a preset name or a raw dict, apply overrides and validate."""
    from .presets import PRESETS

    if isinstance(source, dict):
        raw = source
    elif isinstance(source, str) and source in PRESETS:
        raw = PRESETS[source]()
    else:
        raw = read_raw(source)
    return validate(apply_overrides(raw, overrides))
