"""Run configuration: nested dataclasses loaded from JSON with strict keys."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .certificate import Constants, derive_constants
from .fields import DATUM_KINDS, GridSpec, VelocityField, make_datum
from .snapshot import load_field


class ConfigError(ValueError):
    pass


@dataclass
class GridConfig:
    n: int = 32
    extent: float = 2 * math.pi


@dataclass
class MeshConfig:
    t_final: float | None = None  # default: scale^2 / 4
    M: int = 64
    gamma: float = 2.0


@dataclass
class ConstantsConfig:
    h0: float | None = None
    h1: float | None = None
    c1: float = 1.0


@dataclass
class DatumConfig:
    kind: str = "curl_gaussian"
    amplitude: float = 0.05
    scale: float | None = None  # default: extent / 16
    lam: float = 1.0
    axis: list = field(default_factory=lambda: [0.0, 0.0, 1.0])
    center: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    snapshot: str | None = None


@dataclass
class LadderConfig:
    count: int = 32
    rho_min: float | None = None
    rho_max: float | None = None
    refine: bool = False


@dataclass
class SolverSettings:
    tol: float = 1e-10
    max_m: int = 20
    order: int = 2


@dataclass
class AuditConfig:
    train_seeds: list = field(default_factory=lambda: list(range(1000, 1020)))
    test_seeds: list = field(default_factory=lambda: list(range(2000, 2020)))
    amplitude: list = field(default_factory=lambda: [0.02, 0.1])
    lemmas: list | None = None
    M: int = 32
    theta: float = 0.5
    n_pairs: int = 2000


@dataclass
class ScanConfig:
    q_list: list = field(default_factory=lambda: [4, 6, 12])
    min_halvings: int = 3
    train_amplitude: float = 0.08
    train_scale_factor: float = 0.85
    train_axis: list = field(default_factory=lambda: [1.0, 0.0, 0.0])


@dataclass
class UniqueConfig:
    M_b: int | None = None  # default: 2 * mesh.M
    gamma_b: float | None = None
    tol_b: float | None = None
    budget_factor: float = 10.0


@dataclass
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    constants: ConstantsConfig = field(default_factory=ConstantsConfig)
    datum: DatumConfig = field(default_factory=DatumConfig)
    ladder: LadderConfig = field(default_factory=LadderConfig)
    solver: SolverSettings = field(default_factory=SolverSettings)
    audit: AuditConfig = field(default_factory=AuditConfig)
    scan: ScanConfig = field(default_factory=ScanConfig)
    unique: UniqueConfig = field(default_factory=UniqueConfig)
    output: str = "out"
    seed: int = 0

    # --- (de)serialization -----------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data, "")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        return cls.from_dict(data)

    def with_overrides(self, assignments) -> "RunConfig":
        data = self.to_dict()
        for item in assignments:
            if "=" not in item:
                raise ConfigError(f"override must look like key.path=value, got {item!r}")
            key, raw = item.split("=", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            node = data
            parts = key.split(".")
            for p in parts[:-1]:
                if not isinstance(node.get(p), dict):
                    raise ConfigError(f"unknown config key {key!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return RunConfig.from_dict(data)

    # --- resolved objects --------------------------------------------------

    def grid_spec(self) -> GridSpec:
        try:
            return GridSpec(int(self.grid.n), float(self.grid.extent))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def datum_scale(self) -> float:
        return self.datum.scale if self.datum.scale is not None else self.grid.extent / 16

    def t_final(self) -> float:
        return self.mesh.t_final if self.mesh.t_final is not None else self.datum_scale() ** 2 / 4

    def constants_obj(self) -> Constants:
        c = self.constants
        try:
            if c.h0 is None and c.h1 is None:
                return derive_constants(c.c1)
            base = derive_constants(c.c1)
            h0 = base.h0 if c.h0 is None else c.h0
            h1 = base.h1 if c.h1 is None else c.h1
            return Constants(float(h0), float(h1), float(c.c1), "configured")
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def make_datum(self) -> VelocityField:
        d = self.datum
        grid = self.grid_spec()
        if d.snapshot is not None:
            try:
                f = load_field(d.snapshot)
            except FileNotFoundError as exc:
                raise ConfigError(f"datum snapshot not found: {d.snapshot}") from exc
            except ValueError as exc:
                raise ConfigError(f"unreadable datum snapshot {d.snapshot}: {exc}") from exc
            if f.grid != grid:
                raise ConfigError(f"snapshot grid {f.grid} differs from configured grid {grid}")
            return f
        if d.kind not in DATUM_KINDS:
            raise ConfigError(f"unknown datum kind {d.kind!r}; choose from {DATUM_KINDS}")
        try:
            return make_datum(d.kind, d.amplitude, self.datum_scale(), grid, lam=d.lam, axis=tuple(d.axis), center=tuple(d.center))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def rho_ladder(self) -> np.ndarray:
        grid = self.grid_spec()
        lo = self.ladder.rho_min if self.ladder.rho_min is not None else 2 * grid.spacing
        hi = self.ladder.rho_max if self.ladder.rho_max is not None else 0.5 * grid.extent
        if not 0 < lo < hi <= 0.5 * grid.extent * (1 + 1e-12):
            raise ConfigError(f"rho ladder bounds must satisfy 0 < rho_min < rho_max <= extent/2, got {lo}, {hi}")
        if self.ladder.count < 16:
            raise ConfigError("rho ladder needs at least 16 radii")
        return np.geomspace(lo, min(hi, 0.5 * grid.extent), self.ladder.count)


def _build(cls, data, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        where = f" in {prefix.rstrip('.')}" if prefix else ""
        raise ConfigError(f"unknown config key(s){where}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = names[name].default_factory() if names[name].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.")
        else:
            kwargs[name] = value
    return cls(**kwargs)
