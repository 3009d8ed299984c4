"""Run configuration: typed sections, YAML ingestion and dotted-key overrides."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

import yaml

from .errors import ConfigError
from .grid import Grid, make_grid
from .reactions import ReactionModel, ViscosityModel, load_model, null_model, toymodel
from .transport import TransportConfig


@dataclass
class GridSection:
    dim: int = 3
    n: int = 16
    extent: float = 2.0 * math.pi


@dataclass
class ModelSection:
    """``name`` is ``toymodel`` or ``null``; ``file`` points to a model description instead."""

    name: str = "toymodel"
    theta: list = field(default_factory=lambda: [1.0])
    reactants: int = 2
    file: Optional[str] = None


@dataclass
class ViscositySection:
    nu_bar: float = 1.0
    slope: Optional[list] = None
    floor: float = 1e-3


@dataclass
class InitialSection:
    """Initial data recipe.

    ``scale`` multiplies both ``u_0`` and ``rho_0 - e_1``.  ``velocity`` is
    ``random`` (band-limited solenoidal, ``max |u| = u_amplitude``),
    ``taylor-green``, ``mode`` (single mode ``u_mode``) or ``zero``.
    Reactants are ``a_amplitude (1 + a_variation r_m)`` with ``|r_m| <= 1``.
    """

    seed: int = 0
    scale: float = 1.0
    velocity: str = "random"
    u_amplitude: float = 0.1
    u_kmax: int = 2
    u_mode: list = field(default_factory=lambda: [1, 0, 0])
    a_amplitude: float = 0.05
    a_variation: float = 0.5
    b_amplitude: float = 0.0
    w_perturbation: float = 0.0
    kmax: int = 2


@dataclass
class TimeSection:
    dt: float = 0.02
    t_max: float = 1.0
    cadence: int = 1
    momentum_order: int = 1


@dataclass
class TransportSection:
    interpolation: str = "linear"
    reaction_method: str = "dopri"
    reaction_rtol: float = 1e-10
    positivity_tolerance: float = 1e-10
    mass_fixer: bool = True


@dataclass
class PicardSection:
    max_iterations: int = 20
    rtol: float = 1e-10
    atol: float = 1e-14
    segment: Optional[float] = None


@dataclass
class DiagnosticsSection:
    decomposition: bool = True
    species_snapshots: bool = True
    write_snapshots: bool = False


@dataclass
class ProbeSection:
    dim: int = 3
    n: int = 16
    nu: float = 1.0
    dt: float = 0.01
    horizons: list = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0])
    p: float = 2.0
    q: float = 4.0 / 3.0
    r: float = 1.0
    initial_mode: list = field(default_factory=lambda: [2, 0, 0])
    initial_amplitude: float = 1.0
    forcing_mode: list = field(default_factory=lambda: [4, 0, 0])
    forcing_amplitude: float = 0.0
    forcing_profile: str = "none"
    forcing_t_off: float = 1.0


@dataclass
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    model: ModelSection = field(default_factory=ModelSection)
    viscosity: ViscositySection = field(default_factory=ViscositySection)
    initial: InitialSection = field(default_factory=InitialSection)
    time: TimeSection = field(default_factory=TimeSection)
    transport: TransportSection = field(default_factory=TransportSection)
    picard: PicardSection = field(default_factory=PicardSection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)
    probe: ProbeSection = field(default_factory=ProbeSection)

    def to_dict(self) -> dict:
        return asdict(self)

    # -- derived objects -----------------------------------------------------
    def make_grid(self) -> Grid:
        return make_grid(self.grid.dim, self.grid.extent, self.grid.n)

    def reaction_model(self) -> ReactionModel:
        return self.models()[0]

    def models(self) -> tuple[ReactionModel, ViscosityModel]:
        m = self.model
        file_visc = None
        if m.file:
            model, file_visc = load_model(m.file)
        elif m.name == "toymodel":
            model = toymodel(tuple(m.theta))
        else:
            model = null_model(m.reactants, len(m.theta), tuple(m.theta))
        M = 1 + model.k + model.l
        v = self.viscosity
        if file_visc is not None and v == ViscositySection():
            return model, file_visc
        slope = tuple(v.slope) if v.slope is not None else (0.0,) * M
        if len(slope) != M:
            raise ConfigError(f"viscosity.slope needs {M} entries (1 + k + l), got {len(slope)}")
        return model, ViscosityModel(float(v.nu_bar), tuple(float(s) for s in slope), float(v.floor))

    def transport_config(self) -> TransportConfig:
        return TransportConfig(**asdict(self.transport))

    def validate(self) -> "RunConfig":
        try:
            self.make_grid()
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from None
        if not self.time.dt > 0:
            raise ConfigError("time.dt must be positive")
        if not self.time.t_max > 0:
            raise ConfigError("time.t_max must be positive")
        if self.time.cadence < 1:
            raise ConfigError("time.cadence must be >= 1")
        nsteps = int(round(self.time.t_max / self.time.dt))
        if 1 + -(-nsteps // self.time.cadence) < 3:
            raise ConfigError("time: t_max, dt and cadence give fewer than three snapshots")
        if self.time.momentum_order not in (1, 2):
            raise ConfigError("time.momentum_order must be 1 or 2")
        if self.initial.velocity not in ("random", "taylor-green", "mode", "zero"):
            raise ConfigError(f"initial.velocity: unknown recipe {self.initial.velocity!r}")
        if self.initial.velocity == "taylor-green" and self.grid.dim != 2:
            raise ConfigError("initial.velocity=taylor-green requires grid.dim=2")
        if self.initial.scale < 0:
            raise ConfigError("initial.scale must be nonnegative")
        if self.model.name not in ("toymodel", "null") and not self.model.file:
            raise ConfigError(f"model.name: unknown model {self.model.name!r}")
        if self.picard.max_iterations < 1:
            raise ConfigError("picard.max_iterations must be >= 1")
        try:
            self.models()
            self.transport_config()
        except ConfigError:
            raise
        except (ValueError, OSError, KeyError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        return self


def _coerce(section_obj, key: str, value: Any, path: str):
    current = getattr(section_obj, key)
    if value is None:
        return None
    typ = type(current) if current is not None else None
    try:
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(current, int):
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if isinstance(current, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(current, list):
            return list(value) if isinstance(value, (list, tuple)) else [value]
        if typ is str:
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected {type(current).__name__}, got {value!r}") from None
    return value


def config_from_dict(data: Optional[Mapping], source: str = "<dict>") -> RunConfig:
    """Build a validated config; unknown sections or keys raise ``ConfigError``."""
    cfg = RunConfig()
    data = data or {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{source}: top level must be a mapping")
    names = {f.name for f in fields(RunConfig)}
    for sec, body in data.items():
        if sec not in names:
            raise ConfigError(f"{source}: unknown key {sec!r}")
        section = getattr(cfg, sec)
        if body is None:
            continue
        if not isinstance(body, Mapping):
            raise ConfigError(f"{source}: section {sec!r} must be a mapping")
        keys = {f.name for f in fields(section)}
        for key, value in body.items():
            if key not in keys:
                raise ConfigError(f"{source}: unknown key {sec}.{key!s}")
            setattr(section, key, _coerce(section, key, value, f"{sec}.{key}"))
    return cfg.validate()


def apply_overrides(data: Optional[dict], overrides: Sequence[str]) -> dict:
    """Merge ``section.key=value`` strings (values parsed as YAML scalars/lists)."""
    data = dict(data or {})
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key {key!r} must be section.key")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: {exc}") from None
        sec = dict(data.get(parts[0]) or {})
        sec[parts[1]] = value
        data[parts[0]] = sec
    return data


def load_yaml(path: Union[str, Path]) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise ConfigError(f"{path}:{where}: {getattr(exc, 'problem', exc)}") from None
    return data or {}


def parse_config(path: Optional[Union[str, Path]], overrides: Sequence[str] = ()) -> RunConfig:
    data = load_yaml(path) if path is not None else {}
    return config_from_dict(apply_overrides(data, overrides), str(path))


def config_reference() -> str:
    """Markdown table of every config key with its default."""
    lines = ["| key | default |", "| --- | --- |"]
    cfg = RunConfig()
    for sec in fields(cfg):
        for f in fields(getattr(cfg, sec.name)):
            lines.append(f"| `{sec.name}.{f.name}` | `{getattr(getattr(cfg, sec.name), f.name)!r}` |")
    return "\n".join(lines)
