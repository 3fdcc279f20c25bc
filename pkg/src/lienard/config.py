"""Run configuration stored as TOML.

A config names either a builtin system or an inline definition, plus one
optional table of parameters per subcommand. Absent keys take the defaults of
the dataclasses below; ``dump`` writes every field so a dumped file loads back
to an equal object.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib
import tomli_w

from .model import LienardSystem, ModelError, Perturbation, builtin


class ConfigError(ValueError):
    pass


@dataclass
class SystemSpec:
    builtin: str = ""
    name: str = ""
    n: int = 0
    f: list[str] = field(default_factory=list)
    g: list[str] = field(default_factory=list)
    omega_box: list[list[float]] = field(default_factory=list)
    xdomain: list[list[float]] = field(default_factory=list)

    def build(self) -> LienardSystem:
        if self.builtin:
            if self.f or self.g:
                raise ConfigError("give either system.builtin or an inline f/g definition, not both")
            try:
                return builtin(self.builtin)
            except ModelError as err:
                raise ConfigError(str(err)) from None
        if not self.f or not self.g:
            raise ConfigError("inline systems need both f and g")
        d = {"n": self.n or len(self.f), "f": self.f, "g": self.g, "name": self.name or "inline"}
        if self.omega_box:
            d["omega_box"] = self.omega_box
        if self.xdomain:
            d["xdomain"] = self.xdomain
        try:
            return LienardSystem.from_dict(d)
        except (ModelError, ValueError) as err:
            raise ConfigError(f"invalid system definition: {err}") from None


@dataclass
class CheckParams:
    grid_density: int = 201


@dataclass
class SimulateParams:
    z0: list[float] = field(default_factory=list)  # empty means (0.5, ..., 0.5, 0, ..., 0)
    t_max: float = 500.0
    rel_tol: float = 1e-10
    abs_tol: float = 1e-10
    convergence_radius: float = 1e-9
    plot_axes: list[str] = field(default_factory=lambda: ["x1", "y1"])


@dataclass
class RoaParams:
    box: list[list[float]] = field(default_factory=list)
    points_per_axis: int = 0  # 0 picks the grid budget default


@dataclass
class ProbeParams:
    stratum: str = "case_a"
    count: int = 20
    subset: list[int] = field(default_factory=list)
    horizon: float = 1.0
    threshold: float = 1e-10


@dataclass
class PeriodicParams:
    eps_list: list[float] = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    period: float = math.pi
    amplitudes: list[float] = field(default_factory=list)  # empty means (1, 0, ..., 0)
    phases: list[float] = field(default_factory=list)
    h: list[str] = field(default_factory=list)  # explicit forcing overrides the cosine family
    guess: list[float] = field(default_factory=list)

    def perturbation(self, n: int) -> Perturbation:
        try:
            if self.h:
                if len(self.h) != n:
                    raise ConfigError(f"periodic.h needs {n} expressions")
                return Perturbation(tuple(self.h), self.period, "explicit")
            amps = self.amplitudes or [1.0] + [0.0] * (n - 1)
            return Perturbation.cosine(n, self.period, amps, self.phases or None)
        except ModelError as err:
            raise ConfigError(f"invalid forcing: {err}") from None


@dataclass
class RunConfig:
    system: SystemSpec = field(default_factory=SystemSpec)
    seed: int = 0
    output_dir: str = "lienard-out"
    check: CheckParams = field(default_factory=CheckParams)
    simulate: SimulateParams = field(default_factory=SimulateParams)
    roa: RoaParams = field(default_factory=RoaParams)
    probe: ProbeParams = field(default_factory=ProbeParams)
    periodic: PeriodicParams = field(default_factory=PeriodicParams)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "")

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"config parse error: {err}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as err:
            raise ConfigError(f"cannot read config: {err}") from None
        return cls.loads(text)

    def dump(self, path) -> None:
        Path(path).write_text(self.dumps())

    def build_system(self) -> LienardSystem:
        if not self.system.builtin and not self.system.f:
            raise ConfigError("config names no system")
        return self.system.build()


def _build(cls, d: Any, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where or 'config'} must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    defaults = cls()
    kwargs = {}
    for name, value in d.items():
        current = getattr(defaults, name)
        key = f"{where}.{name}" if where else name
        if hasattr(current, "__dataclass_fields__"):
            kwargs[name] = _build(type(current), value, key)
        else:
            kwargs[name] = _coerce(current, value, key)
    return cls(**kwargs)


def _coerce(default, value, key):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:  # pragma: no cover
        ok = True
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {type(value).__name__}")
    return value

