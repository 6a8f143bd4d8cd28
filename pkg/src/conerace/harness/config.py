"""Episode configuration and its INI representation.

Every field has a default, so an empty file is a valid config. ``dump``
writes all values (the ``sim --dump-config`` output) and ``load`` reads a
file written that way or any subset of it.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..control.mpc import MpcConfig
from ..control.pure_pursuit import PurePursuitConfig
from ..dynamics import VehicleParams
from ..sensors import KINDS, SensorSchedule
from ..track import TrackSpec, benchmark_spec

CONTROLLERS = ("mpc", "pure_pursuit")
MISSIONS = ("two_lap", "fixed_path")
LOCALIZATION = ("ekf", "truth")


class ConfigError(ValueError):
    """Invalid or unreadable configuration (a usage error)."""


@dataclass(frozen=True)
class MappingConfig:
    resolution: float = 0.1
    s_max: float = 50.0
    threshold: float = 10.0
    suppress_radius: float = 1.0
    lidar_confidence: float = 0.6
    stamp_edge: float = 0.5
    stamp_corner: float = 0.25
    conenet_model: str = ""


@dataclass(frozen=True)
class EpisodeConfig:
    """Everything that determines a run, together with the seed."""

    seed: int = 0
    controller: str = "mpc"
    mission: str = "two_lap"
    localization: str = "ekf"
    duration: float = 240.0
    race_laps: int = 1
    lap1_speed_cap: float = 3.0
    initial_speed: float = 1.0
    plant_dt: float = 0.01
    control_dt: float = 0.1
    track_file: str = ""
    track: TrackSpec = field(default_factory=benchmark_spec)
    track_seed: int = -1
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    sensors: SensorSchedule = field(default_factory=SensorSchedule)
    process_noise: tuple = (1e-4, 1e-4, 1e-5, 1e-3, 1e-3, 0.5)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    pure_pursuit: PurePursuitConfig = field(default_factory=PurePursuitConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        if self.mission not in MISSIONS:
            raise ConfigError(f"mission must be one of {MISSIONS}, got {self.mission!r}")
        if self.localization not in LOCALIZATION:
            raise ConfigError(f"localization must be one of {LOCALIZATION}, got {self.localization!r}")
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if self.race_laps < 1:
            raise ConfigError("race_laps must be at least 1")
        ratio = self.control_dt / self.plant_dt
        if not (self.plant_dt > 0 and abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1):
            raise ConfigError("control_dt must be a positive multiple of plant_dt")
        if len(self.process_noise) != 6:
            raise ConfigError("process_noise needs six entries")

    @property
    def control_every(self) -> int:
        return int(round(self.control_dt / self.plant_dt))

    @property
    def effective_track_seed(self) -> int:
        return self.seed if self.track_seed < 0 else self.track_seed

    def with_(self, **kw) -> "EpisodeConfig":
        return replace(self, **kw)


_SCALARS = (
    "seed",
    "controller",
    "mission",
    "localization",
    "duration",
    "race_laps",
    "lap1_speed_cap",
    "initial_speed",
    "plant_dt",
    "control_dt",
    "track_file",
    "track_seed",
)
_SECTIONS = {
    "track": TrackSpec,
    "vehicle": VehicleParams,
    "mpc": MpcConfig,
    "pure_pursuit": PurePursuitConfig,
    "mapping": MappingConfig,
}
_SENSOR_SCALARS = [f.name for f in fields(SensorSchedule) if f.name not in ("rates", "dropouts", "confidence_beta")]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text: str, like, name: str):
    text = text.strip()
    try:
        if isinstance(like, bool):
            return text.lower() in ("1", "true", "yes", "on")
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float) or like is None:
            return None if text == "" else float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc


def _windows_to_text(windows) -> str:
    return " ".join(f"{t0!r}:{t1!r}" for t0, t1 in windows)


def _text_to_windows(text: str, name: str):
    out = []
    for tok in text.split():
        try:
            a, b = tok.split(":")
            out.append((float(a), float(b)))
        except ValueError as exc:
            raise ConfigError(f"bad dropout window {tok!r} for {name}") from exc
    return tuple(out)


def to_parser(cfg: EpisodeConfig) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["episode"] = {k: _fmt(getattr(cfg, k)) for k in _SCALARS}
    cp["episode"]["process_noise"] = " ".join(repr(float(v)) for v in cfg.process_noise)
    for sec, cls in _SECTIONS.items():
        obj = getattr(cfg, sec)
        cp[sec] = {f.name: _fmt(getattr(obj, f.name)) for f in fields(cls)}
    sch = cfg.sensors
    cp["sensors"] = {k: _fmt(getattr(sch, k)) for k in _SENSOR_SCALARS}
    cp["sensors"]["confidence_beta"] = " ".join(repr(float(v)) for v in sch.confidence_beta)
    cp["sensor_rates"] = {k: _fmt(float(sch.rates[k])) for k in KINDS if k in sch.rates}
    cp["dropouts"] = {k: _windows_to_text(sch.dropouts[k]) for k in KINDS if k in sch.dropouts}
    return cp


def dump(cfg: EpisodeConfig) -> str:
    buf = io.StringIO()
    to_parser(cfg).write(buf)
    return buf.getvalue()


def _build(cls, base, section, name):
    kw = {}
    for key, text in section.items():
        if key not in {f.name for f in fields(cls)}:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        kw[key] = _parse(text, getattr(base, key), f"{name}.{key}")
    try:
        return replace(base, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{name}]: {exc}") from exc


def from_text(text: str, base: EpisodeConfig | None = None) -> EpisodeConfig:
    base = base or EpisodeConfig()
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    known = {"episode", "sensors", "sensor_rates", "dropouts", *_SECTIONS}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]")
    kw = {}
    if cp.has_section("episode"):
        for key, text_v in cp["episode"].items():
            if key == "process_noise":
                try:
                    kw[key] = tuple(float(v) for v in text_v.split())
                except ValueError as exc:
                    raise ConfigError("bad process_noise") from exc
            elif key in _SCALARS:
                kw[key] = _parse(text_v, getattr(base, key), key)
            else:
                raise ConfigError(f"unknown key {key!r} in [episode]")
    for sec, cls in _SECTIONS.items():
        if cp.has_section(sec):
            kw[sec] = _build(cls, getattr(base, sec), cp[sec], sec)
    sch = base.sensors
    skw = {}
    if cp.has_section("sensors"):
        for key, text_v in cp["sensors"].items():
            if key == "confidence_beta":
                skw[key] = tuple(float(v) for v in text_v.split())
            elif key in _SENSOR_SCALARS:
                skw[key] = _parse(text_v, getattr(sch, key), f"sensors.{key}")
            else:
                raise ConfigError(f"unknown key {key!r} in [sensors]")
    if cp.has_section("sensor_rates"):
        rates = dict(sch.rates)
        for key, text_v in cp["sensor_rates"].items():
            if key not in KINDS:
                raise ConfigError(f"unknown sensor {key!r} in [sensor_rates]")
            rates[key] = _parse(text_v, 1.0, f"sensor_rates.{key}")
        skw["rates"] = rates
    if cp.has_section("dropouts"):
        drop = {}
        for key, text_v in cp["dropouts"].items():
            if key not in KINDS:
                raise ConfigError(f"unknown sensor {key!r} in [dropouts]")
            windows = _text_to_windows(text_v, key)
            if windows:
                drop[key] = windows
        skw["dropouts"] = drop
    if skw:
        try:
            kw["sensors"] = replace(sch, **skw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid [sensors]: {exc}") from exc
    try:
        return replace(base, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load(path, base: EpisodeConfig | None = None) -> EpisodeConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return from_text(p.read_text(), base)


def process_noise_matrix(cfg: EpisodeConfig) -> np.ndarray:
    return np.diag(np.asarray(cfg.process_noise, dtype=float))
