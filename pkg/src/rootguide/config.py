"""Run configuration: TOML (hand-edited) or JSON (generated), strict keys."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from rootguide.metrics import RewardConfig
from rootguide.priors import RetrievalWeights
from rootguide.twin import TwinParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Profile:
    v_max: float  # m/s
    omega_max: float  # rad/s

    def __post_init__(self):
        if not (self.v_max > 0 and self.omega_max > 0):
            raise ValueError("velocities must be positive")


DEFAULT_PROFILES = {
    "slow": Profile(0.2, 0.6),
    "middle": Profile(0.4, 1.0),
    "fast": Profile(0.6, 1.3),
}


@dataclass(frozen=True)
class SafetyConfig:
    # None centres the prism on the object's held pose in the root frame
    center: tuple[float, float, float] | None = None
    half_extents: tuple[float, float, float] = (0.2, 0.1, 0.2)
    window_n: int = 10

    def __post_init__(self):
        if self.window_n < 1:
            raise ValueError("window_n must be >= 1")
        if len(self.half_extents) != 3 or min(self.half_extents) <= 0:
            raise ValueError("half_extents must be three positive numbers")


@dataclass(frozen=True)
class FollowerConfig:
    """Kinematic stand-in for a tracking policy: delayed reference plus bounded noise."""

    noise_pos: float = 0.005  # m, uniform per axis
    noise_yaw: float = 0.01  # rad, uniform
    delay_frames: int = 2
    grasp_tol: float = 0.02  # m, hand closes once the root is this close to the target

    def __post_init__(self):
        if self.noise_pos < 0 or self.noise_yaw < 0 or self.delay_frames < 0:
            raise ValueError("noise and delay must be non-negative")
        if not self.grasp_tol > 0:
            raise ValueError("grasp_tol must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    camera_fov_h: float = math.radians(87.0)
    gaze_standoff: float = 0.8
    grasp_reach: float = 0.1  # m, largest predicted-vs-true object offset a re-grasp tolerates
    truth_refine: int = 10  # ground-truth drop runs at sim_dt / truth_refine
    gravity_compensation: bool = False
    mpl_radius: float = 0.05
    cpl_window: float = 0.5
    inflation_radius: float = 0.3
    map_cell: float = 0.05
    map_margin: float = 2.0
    lift_height: float = 0.1
    hold_time: float = 1.0
    success_tol: float = 0.1

    def __post_init__(self):
        for name in ("camera_fov_h", "mpl_radius", "map_cell", "hold_time", "success_tol", "grasp_reach"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.truth_refine < 1:
            raise ValueError("truth_refine must be >= 1")


@dataclass(frozen=True)
class Paths:
    prior_library: str | None = None
    map: str | None = None
    map_meta: str | None = None


@dataclass(frozen=True)
class Config:
    h_stand: float = 0.75
    squat_height: float = 0.45
    dt: float = 0.02
    profile: str = "middle"
    profiles: dict = field(default_factory=lambda: dict(DEFAULT_PROFILES))
    retrieval: RetrievalWeights = RetrievalWeights()
    safety: SafetyConfig = SafetyConfig()
    twin: TwinParams = TwinParams()
    reward: RewardConfig = RewardConfig()
    follower: FollowerConfig = FollowerConfig()
    pipeline: PipelineConfig = PipelineConfig()
    paths: Paths = Paths()

    def __post_init__(self):
        for name in ("h_stand", "squat_height", "dt"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: must be positive, got {getattr(self, name)}")
        if self.profile not in self.profiles:
            raise ConfigError(f"profile: unknown profile {self.profile!r} (have {sorted(self.profiles)})")

    @property
    def limits(self) -> Profile:
        return self.profiles[self.profile]

    def with_profile(self, name: str) -> Config:
        return dataclasses.replace(self, profile=name)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "retrieval": RetrievalWeights,
    "safety": SafetyConfig,
    "twin": TwinParams,
    "reward": RewardConfig,
    "follower": FollowerConfig,
    "pipeline": PipelineConfig,
    "paths": Paths,
}


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, list) else v


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a table")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{where}.{key}: unknown key")
    kw = {k: _tuplify(v) for k, v in data.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict, base_dir: Path | None = None) -> Config:
    data = dict(data)
    top = {f.name for f in dataclasses.fields(Config)}
    for key in data:
        if key not in top:
            raise ConfigError(f"{key}: unknown key")
    kw = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kw[key] = _build(_SECTIONS[key], value, key)
        elif key == "profiles":
            profiles = dict(DEFAULT_PROFILES)
            if not isinstance(value, dict):
                raise ConfigError("profiles: expected a table")
            for name, p in value.items():
                profiles[name] = _build(Profile, p, f"profiles.{name}")
            kw[key] = profiles
        else:
            if isinstance(value, (dict, list)):
                raise ConfigError(f"{key}: expected a scalar")
            kw[key] = value
    cfg = Config(**kw)
    if base_dir is not None:
        resolved = {}
        for f in dataclasses.fields(Paths):
            p = getattr(cfg.paths, f.name)
            if p is None:
                continue
            full = (base_dir / p) if not Path(p).is_absolute() else Path(p)
            if not full.exists():
                raise ConfigError(f"paths.{f.name}: file not found: {full}")
            resolved[f.name] = str(full)
        cfg = dataclasses.replace(cfg, paths=dataclasses.replace(cfg.paths, **resolved))
    return cfg


def load_config(path: str | Path | None) -> Config:
    """Parse, validate and default-fill a config file. ``None`` gives all defaults."""
    if path is None:
        return Config()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    if path.suffix.lower() == ".json":
        if not text.strip():
            return Config()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    else:
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            # tomli reports "(at line L, column C)" in the message
            raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table")
    return config_from_dict(data, base_dir=path.parent)
