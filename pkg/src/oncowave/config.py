"""INI-style experiment configuration.

Grammar: ``[section]`` headers followed by ``key = value`` lines; ``#`` and
``;`` start comments. Sections and keys are fixed (see the dataclasses
below); anything unknown is an error. Empty values mean "use the default"
for optional fields. Lists are comma-separated.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import typing
from dataclasses import dataclass, field

from .errors import ConfigError, InvalidParameterError
from .model import ModelParams


@dataclass
class ModelSection:
    a: float = 0.96
    theta: float = 25.0
    gamma: float = 40.0 / 3.0
    D: float = 0.025


@dataclass
class RunSection:
    seed: int = 0


@dataclass
class BifurcationSection:
    theta_min: float = 1.0
    theta_max: float = 300.0
    n_samples: int = 256


@dataclass
class DispersionSection:
    rho_min: float = 1e-3
    rho_max: float = 20.0
    n: int = 2000


@dataclass
class EnvelopeSection:
    c: typing.Optional[float] = None
    c_factor: float = 1.05
    rho: typing.Optional[float] = None
    eps: typing.Optional[float] = None
    kappa_frac: float = 0.5
    residual_points: int = 20001
    tol: float = 1e-10


@dataclass
class FixedpointSection:
    n: int = 4096
    max_iter: int = 20000
    tol: float = 1e-8
    left_tail: str = "exponential"


@dataclass
class SimulateSection:
    domain_length: float = 400.0
    nx: int = 4000
    t_end: typing.Optional[float] = None
    dt: typing.Optional[float] = None
    n_snapshots: int = 81
    kinetics: str = "full"
    V_amplitude: float = 1.0
    V_width: typing.Optional[float] = None
    V_center: float = 0.0
    C0: float = 1.0
    I0: float = 0.0
    seed_component: str = "V"
    seed_shape: str = "gaussian"
    probes: typing.List[float] = field(default_factory=list)
    level: typing.Optional[float] = None
    component: str = "V"
    export_every: int = 10


@dataclass
class Table1Section:
    simulate: bool = True
    nx: int = 4000
    domain_length: float = 400.0


SECTIONS = {
    "model": ModelSection,
    "run": RunSection,
    "bifurcation": BifurcationSection,
    "dispersion": DispersionSection,
    "envelope": EnvelopeSection,
    "fixedpoint": FixedpointSection,
    "simulate": SimulateSection,
    "table1": Table1Section,
}


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    run: RunSection = field(default_factory=RunSection)
    bifurcation: BifurcationSection = field(default_factory=BifurcationSection)
    dispersion: DispersionSection = field(default_factory=DispersionSection)
    envelope: EnvelopeSection = field(default_factory=EnvelopeSection)
    fixedpoint: FixedpointSection = field(default_factory=FixedpointSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    table1: Table1Section = field(default_factory=Table1Section)

    def params(self) -> ModelParams:
        m = self.model
        try:
            return ModelParams(m.a, m.theta, m.gamma, m.D)
        except InvalidParameterError as exc:
            raise ConfigError(f"[model] {exc}") from exc


def _convert(raw: str, tp, where: str):
    hints = typing.get_args(tp)
    if typing.get_origin(tp) is typing.Union:
        if raw.strip() == "":
            return None
        tp = next(h for h in hints if h is not type(None))
    if typing.get_origin(tp) in (list, typing.List):
        (inner,) = typing.get_args(tp)
        return [_convert(item, inner, where) for item in raw.split(",") if item.strip()]
    raw = raw.strip()
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {getattr(tp, '__name__', tp)}") from None


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (D vs d)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = ExperimentConfig()
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        section = getattr(cfg, name)
        hints = typing.get_type_hints(type(section))
        for key, raw in cp.items(name):
            if key not in hints:
                raise ConfigError(f"unknown key '{key}' in [{name}]")
            setattr(section, key, _convert(raw, hints[key], f"[{name}] {key}"))
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ", ".join(_format(v) for v in value)
    return str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialise every field; ``parse_config(dump_config(c)) == c``."""
    out = io.StringIO()
    for name in SECTIONS:
        out.write(f"[{name}]\n")
        for f in dataclasses.fields(getattr(cfg, name)):
            out.write(f"{f.name} = {_format(getattr(getattr(cfg, name), f.name))}\n")
        out.write("\n")
    return out.getvalue()
