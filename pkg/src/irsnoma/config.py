"""Experiment configuration: typed sections, YAML loading, ``key=value`` overrides.

Every parameter has a default, so an empty file (or ``default``) resolves to
the full reference setup. Unknown keys are rejected with the dotted key path.
"""

from __future__ import annotations

import dataclasses
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union, get_args, get_origin, get_type_hints

import numpy as np
import yaml


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}" if key else msg)
        self.key = key


def _ap_grid() -> list:
    return [[1.25, 1.25, 3.0], [1.25, 3.75, 3.0], [3.75, 1.25, 3.0], [3.75, 3.75, 3.0]]


def _detectors() -> list:
    return [{"azimuth_deg": 0.0, "elevation_deg": 90.0, "fov_deg": 85.0, "area": 1e-4}]


@dataclass
class SceneConfig:
    room: list = field(default_factory=lambda: [5.0, 5.0, 3.0])
    ap_positions: list = field(default_factory=_ap_grid)
    ap_half_angle_deg: float = 60.0
    irs_rows: int = 7
    irs_cols: int = 7
    mirror_width: float = 0.25
    mirror_height: float = 0.15
    mirror_spacing: float = 0.10
    irs_wall: str = "y0"
    irs_center: list = field(default_factory=lambda: [2.5, 0.0, 1.5])
    reflectance: float = 0.95
    users: int = 5
    height_range: list = field(default_factory=lambda: [0.8, 1.2])
    detectors: list = field(default_factory=_detectors)
    filter_gain: float = 1.0
    refractive_index: float = 1.5
    # fixed user positions [[x, y, z], ...]; null places users at random
    user_positions: Optional[list] = None
    wall_margin: float = 0.1

    @property
    def num_mirrors(self) -> int:
        return self.irs_rows * self.irs_cols


@dataclass
class LinkConfig:
    p_opt: float = 2.0
    q: float = 1.0
    bandwidth: float = 20e6
    noise_psd: float = 1e-21
    responsivity: float = 0.5
    p_max: float = 5.0

    @property
    def p_elec(self) -> float:
        return self.p_opt / self.q


@dataclass
class PowerConfig:
    p_circuit_tx: float = 3.250
    p_led: float = 2.758
    p_amp: float = 0.280
    p_filter_tx: float = 0.0025
    p_dac: float = 0.175
    p_element: float = 0.100
    p_circuit_rx: float = 0.0019
    p_filter_rx: float = 0.0025
    p_tia: float = 2.500
    p_adc: float = 0.095
    per_device: bool = True
    irs_power_changed_only: bool = False


@dataclass
class EnvConfig:
    dt: float = 0.1
    steps: int = 100
    r_min_range: list = field(default_factory=lambda: [1e6, 1e6])
    traffic_resample: str = "episode"
    p_block: float = 0.1
    blocked_duration: float = 2.0
    mobility: bool = True
    speed_range: list = field(default_factory=lambda: [0.0, 2.0])
    pause_range: list = field(default_factory=lambda: [0.0, 1.0])
    w_ee: float = 1.0
    w_j: float = 1.0
    see_ref: float = 1e7
    lambda_qos: float = 1.0
    lambda_power: float = 1.0


@dataclass
class AgentsConfig:
    power_hidden: list = field(default_factory=lambda: [128, 128])
    angle_hidden: list = field(default_factory=lambda: [64, 64])
    critic_hidden: list = field(default_factory=lambda: [256, 256])
    joint_hidden: list = field(default_factory=lambda: [128, 128])
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    gamma: float = 0.99
    tau: float = 0.001
    target_update: str = "step"
    buffer_size: int = 100_000
    batch_size: int = 128
    sigma0: float = 0.2
    sigma_decay: float = 0.9999
    sigma_min: float = 0.01
    episodes: int = 2000
    grad_clip: Optional[float] = 1.0
    preact_reg: float = 1e-3


@dataclass
class BaselineConfig:
    fixed_alpha: Optional[list] = None
    dqn_power_profiles: int = 8
    dqn_angle_presets: int = 8
    dqn_hidden: list = field(default_factory=lambda: [128, 128])
    dqn_lr: float = 1e-3
    dqn_eps_start: float = 1.0
    dqn_eps_end: float = 0.05
    dqn_eps_decay: float = 0.999
    oracle_alpha_steps: int = 20
    oracle_angle_steps: int = 9
    oracle_budget: int = 1_000_000


@dataclass
class RunConfig:
    seeds: list = field(default_factory=lambda: [0])
    out: str = "runs"
    scheme: str = "two_agent"
    checkpoint_every: int = 100
    eval_episodes: int = 10
    jobs: int = 1


@dataclass
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    power: PowerConfig = field(default_factory=PowerConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    agents: AgentsConfig = field(default_factory=AgentsConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> "ExperimentConfig":
        _validate(self)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def copy(self) -> "ExperimentConfig":
        return from_dict(self.to_dict())


SCHEMES = ("two_agent", "single_agent_ddpg", "random_irs", "no_irs", "fixed_power", "dqn_codebook")


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads unsigned or dotless exponents (``1e-5``, ``1.5e3``) as floats."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?|\.[0-9_]+)[eE][-+]?[0-9]+$"),
    list("-+0123456789."))


def _coerce(value: Any, tp, key: str):
    origin = get_origin(tp)
    if origin is Union:
        args = [a for a in get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], key)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if tp is list or origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, f"expected a list, got {value!r}")
        return list(value)
    return value


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix, "expected a mapping")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for k in data:
        if k not in names:
            raise ConfigError(f"{prefix}{k}", "unrecognized key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        tp = hints[f.name]
        key = prefix + f.name
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _build(tp, data[f.name] or {}, key + ".")
        else:
            kwargs[f.name] = _coerce(data[f.name], tp, key)
    return cls(**kwargs)


def from_dict(data: Optional[dict]) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}, "").validate()


def _set_path(data: dict, dotted: str, value: Any):
    parts = dotted.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "cannot override inside a non-mapping value")
    node[parts[-1]] = value


def parse_override(item: str) -> tuple[str, Any]:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(item, "override must look like section.key=value")
    try:
        value = yaml.load(raw, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(key, f"cannot parse value {raw!r}: {exc}") from None
    return key.strip(), value


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[list] = None) -> ExperimentConfig:
    """Read a YAML config (``None`` or ``"default"`` means built-in defaults) and apply overrides."""
    data: dict = {}
    if path is not None and str(path) != "default":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("", f"cannot read config {path}: {exc}") from None
        try:
            data = yaml.load(text, Loader=_Loader) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("", f"invalid YAML in {path}: {exc}") from None
    for item in overrides or []:
        key, value = parse_override(item)
        _set_path(data, key, value)
    return from_dict(data)


def _validate(cfg: ExperimentConfig):
    s, lk, e, a, b, r = cfg.scene, cfg.link, cfg.env, cfg.agents, cfg.baseline, cfg.run

    def need(cond, key, msg):
        if not cond:
            raise ConfigError(key, msg)

    need(len(s.room) == 3 and all(v > 0 for v in s.room), "scene.room", "three positive dimensions")
    need(all(len(p) == 3 for p in s.ap_positions), "scene.ap_positions", "each AP needs [x, y, z]")
    need(0.0 < s.ap_half_angle_deg < 90.0, "scene.ap_half_angle_deg", "must lie in (0, 90)")
    need(s.irs_rows >= 0 and s.irs_cols >= 0, "scene.irs_rows", "mirror counts must be non-negative")
    need(s.irs_wall in ("x0", "x1", "y0", "y1"), "scene.irs_wall", "one of x0, x1, y0, y1")
    need(0.0 <= s.reflectance <= 1.0, "scene.reflectance", "must lie in [0, 1]")
    need(s.users >= 1, "scene.users", "need at least one user")
    need(len(s.height_range) == 2 and 0 <= s.height_range[0] <= s.height_range[1] <= s.room[2],
         "scene.height_range", "need [lo, hi] inside the room height")
    need(len(s.detectors) >= 1, "scene.detectors", "need at least one detector")
    for i, d in enumerate(s.detectors):
        extra = set(d) - {"azimuth_deg", "elevation_deg", "fov_deg", "area"}
        need(not extra, f"scene.detectors[{i}].{next(iter(extra), '')}", "unrecognized key")
    if s.user_positions is not None:
        need(len(s.user_positions) == s.users and all(len(p) == 3 for p in s.user_positions),
             "scene.user_positions", "need one [x, y, z] per user")
    need(0 <= s.wall_margin < min(s.room[:2]) / 2, "scene.wall_margin", "too large for the room")
    for k in ("q", "bandwidth", "noise_psd", "responsivity", "p_opt"):
        need(getattr(lk, k) > 0, f"link.{k}", "must be positive")
    need(lk.p_max >= 0, "link.p_max", "must be non-negative")
    for f in dataclasses.fields(cfg.power):
        v = getattr(cfg.power, f.name)
        need(isinstance(v, bool) or v >= 0, f"power.{f.name}", "must be non-negative")
    need(e.dt > 0, "env.dt", "must be positive")
    need(e.steps >= 1, "env.steps", "must be at least 1")
    need(len(e.r_min_range) == 2 and 0 <= e.r_min_range[0] <= e.r_min_range[1], "env.r_min_range",
         "need 0 <= lo <= hi")
    need(e.traffic_resample in ("episode", "step"), "env.traffic_resample", "episode or step")
    need(0.0 <= e.p_block <= 1.0, "env.p_block", "must lie in [0, 1]")
    need(e.blocked_duration >= e.dt, "env.blocked_duration", "must be at least one step")
    if 0.0 < e.p_block < 1.0:
        recover = e.dt / e.blocked_duration
        need(recover * e.p_block / (1.0 - e.p_block) <= 1.0, "env.p_block",
             "too close to 1 for the chosen blocked_duration")
    need(len(e.speed_range) == 2 and 0 <= e.speed_range[0] <= e.speed_range[1], "env.speed_range",
         "need 0 <= lo <= hi")
    need(len(e.pause_range) == 2 and 0 <= e.pause_range[0] <= e.pause_range[1], "env.pause_range",
         "need 0 <= lo <= hi")
    need(e.see_ref > 0, "env.see_ref", "must be positive")
    for k in ("power_hidden", "angle_hidden", "critic_hidden", "joint_hidden"):
        need(all(isinstance(h, int) and h > 0 for h in getattr(a, k)), f"agents.{k}", "positive integers")
    need(a.lr_actor >= 0 and a.lr_critic >= 0, "agents.lr_actor", "learning rates must be >= 0")
    need(0.0 <= a.gamma <= 1.0, "agents.gamma", "must lie in [0, 1]")
    need(0.0 < a.tau <= 1.0, "agents.tau", "must lie in (0, 1]")
    need(a.target_update in ("step", "episode"), "agents.target_update", "step or episode")
    need(a.batch_size >= 1 and a.buffer_size >= a.batch_size, "agents.buffer_size",
         "must be at least the batch size")
    need(0 < a.sigma_decay <= 1 and 0 <= a.sigma_min <= a.sigma0, "agents.sigma_decay",
         "need 0 < decay <= 1 and 0 <= sigma_min <= sigma0")
    need(a.episodes >= 0, "agents.episodes", "must be non-negative")
    need(a.grad_clip is None or a.grad_clip > 0, "agents.grad_clip", "positive or null")
    need(a.preact_reg >= 0, "agents.preact_reg", "non-negative")
    if b.fixed_alpha is not None:
        fa = np.asarray(b.fixed_alpha, dtype=float)
        need(fa.size == s.users and np.all(fa >= 0) and abs(fa.sum() - 1) <= 1e-9,
             "baseline.fixed_alpha", "must be a simplex vector with one entry per user")
    need(1 <= b.dqn_power_profiles <= 256 and 1 <= b.dqn_angle_presets <= 256,
         "baseline.dqn_power_profiles", "codebook sizes must lie in [1, 256]")
    need(r.scheme in SCHEMES, "run.scheme", f"one of {', '.join(SCHEMES)}")
    need(len(r.seeds) >= 1 and all(isinstance(x, int) for x in r.seeds), "run.seeds", "non-empty integer list")
    need(r.jobs >= 1, "run.jobs", "must be at least 1")
    need(r.eval_episodes >= 1, "run.eval_episodes", "must be at least 1")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named component of a run.

    Streams are keyed by name, so adding a consumer never shifts another stream.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode()),)))
