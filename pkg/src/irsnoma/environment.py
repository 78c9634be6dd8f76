"""Indoor IRS-assisted NOMA VLC downlink as a two-agent MDP.

The power agent observes ``[log10(1+SINR), R_min (Mbit/s), yaw, roll]``
(length 2K + 2M) and outputs a point on the K-simplex. The mirror agent observes
``[log10(1+SINR), alpha, R_min (Mbit/s)]`` (length 3K) and outputs 2M values in
[-1, 1], interleaved as (yaw_1, roll_1, yaw_2, roll_2, ...) and scaled by pi/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import noma, power
from .channel import ChannelGains, ChannelModel, LedAp, PhotoDetector, detector_normal, mirror_array_centers
from .config import ExperimentConfig, substream

HALF_PI = math.pi / 2


class EnvironmentNotReset(RuntimeError):
    pass


# ---------------------------------------------------------------- action decoding

def softmax(x) -> np.ndarray:
    z = np.asarray(x, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


def decode_action_power(raw, order) -> np.ndarray:
    """Map unconstrained logits to inverse-ordered NOMA coefficients."""
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise ValueError("power action contains non-finite values")
    return noma.enforce_inverse_order(softmax(raw), order)


def decode_action_angles(raw) -> np.ndarray:
    """Map unconstrained values to (M, 2) yaw/roll pairs inside [-pi/2, pi/2]."""
    raw = np.asarray(raw, dtype=float).reshape(-1)
    if not np.all(np.isfinite(raw)):
        raise ValueError("angle action contains non-finite values")
    if raw.size % 2:
        raise ValueError("angle action length must be even")
    return unit_to_angles(np.tanh(raw))


def unit_to_angles(unit) -> np.ndarray:
    a = np.asarray(unit, dtype=float).reshape(-1, 2) * HALF_PI
    return np.clip(a, -HALF_PI, HALF_PI)


# ---------------------------------------------------------------- stochastic processes

@dataclass
class MobilityState:
    pos: np.ndarray        # (K, 2) xy on the receiving plane
    waypoint: np.ndarray   # (K, 2)
    speed: np.ndarray      # (K,)
    pause: np.ndarray      # (K,) remaining pause time, s
    lo: np.ndarray         # footprint lower corner (2,)
    hi: np.ndarray         # footprint upper corner (2,)
    speed_range: tuple = (0.0, 2.0)
    pause_range: tuple = (0.0, 1.0)


def init_mobility(k: int, lo, hi, speed_range, pause_range, rng: np.random.Generator) -> MobilityState:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    pos = rng.uniform(lo, hi, size=(k, 2))
    wp = rng.uniform(lo, hi, size=(k, 2))
    speed = rng.uniform(*speed_range, size=k)
    return MobilityState(pos, wp, speed, np.zeros(k), lo, hi, tuple(speed_range), tuple(pause_range))


def rwp_step(state: MobilityState, dt: float, rng: np.random.Generator) -> MobilityState:
    """Advance every user one random-waypoint step of length ``dt`` seconds."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    pos, wp = state.pos.copy(), state.waypoint.copy()
    speed, pause = state.speed.copy(), state.pause.copy()
    for k in range(pos.shape[0]):
        if pause[k] > 0.0:
            pause[k] -= dt
            if pause[k] <= 0.0:
                pause[k] = 0.0
                wp[k] = rng.uniform(state.lo, state.hi)
                speed[k] = rng.uniform(*state.speed_range)
            continue
        delta = wp[k] - pos[k]
        dist = math.hypot(delta[0], delta[1])
        travel = speed[k] * dt
        if dist <= travel:
            pos[k] = wp[k]
            pause[k] = rng.uniform(*state.pause_range)
            if pause[k] <= 0.0:
                wp[k] = rng.uniform(state.lo, state.hi)
                speed[k] = rng.uniform(*state.speed_range)
        elif travel > 0.0:
            pos[k] = pos[k] + delta * (travel / dist)
    return MobilityState(pos, wp, speed, pause, state.lo, state.hi, state.speed_range, state.pause_range)


@dataclass
class BlockageProcess:
    """Independent two-state Markov chain per (user, AP) LoS link.

    Blocked links recover with probability ``dt / mean_blocked`` per step; clear
    links become blocked with the rate that makes ``p_block`` stationary.
    """
    p_block: float = 0.1
    mean_blocked: float = 2.0
    dt: float = 0.1

    @property
    def p_recover(self) -> float:
        return min(1.0, self.dt / self.mean_blocked)

    @property
    def p_enter(self) -> float:
        if self.p_block <= 0.0:
            return 0.0
        if self.p_block >= 1.0:
            return 1.0
        return self.p_recover * self.p_block / (1.0 - self.p_block)

    def initial(self, shape, rng: np.random.Generator) -> np.ndarray:
        return rng.random(shape) < self.p_block

    def step(self, mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.p_block >= 1.0:
            return np.ones_like(mask, dtype=bool)
        u = rng.random(mask.shape)
        return np.where(mask, u >= self.p_recover, u < self.p_enter)


def blockage_step(mask: np.ndarray, process: BlockageProcess, rng: np.random.Generator) -> np.ndarray:
    return process.step(mask, rng)


def sample_traffic(k: int, r_range, rng: np.random.Generator) -> np.ndarray:
    """Per-user minimum rate in bit/s, uniform in ``r_range``."""
    lo, hi = float(r_range[0]), float(r_range[1])
    if lo == hi:
        return np.full(k, lo)
    return rng.uniform(lo, hi, size=k)


# ---------------------------------------------------------------- link evaluation

@dataclass
class LinkMetrics:
    alpha: np.ndarray
    gains: np.ndarray
    sinr: np.ndarray
    rates: np.ndarray
    sum_rate: float
    power: power.PowerBreakdown
    see: float
    jain: float
    objective: float


def evaluate_link(gains: ChannelGains, alpha_simplex, link: noma.LinkParams, n_aps: int,
                  n_active_mirrors: int, power_cfg: power.PowerModelConfig) -> LinkMetrics:
    """NOMA rates, power and objective for one channel realisation.

    ``alpha_simplex`` is reordered so that weaker users receive more power.
    """
    h = gains.combined
    order = noma.sort_users_by_gain(h)
    alpha = noma.enforce_inverse_order(alpha_simplex, order)
    g = noma.sinr(alpha, h, link, order)
    r = noma.rate(g, link.bandwidth)
    total = noma.sum_rate(r)
    pb = power.total_power(link.p_elec, n_aps, n_active_mirrors, h.size, power_cfg)
    s = power.see(total, pb.p_total)
    j = power.jain(r)
    return LinkMetrics(alpha, h, g, r, total, pb, s, j, power.objective(j, s))


@dataclass(frozen=True)
class RewardConfig:
    w_ee: float = 1.0
    w_j: float = 1.0
    see_ref: float = 1e7
    lambda_qos: float = 1.0
    lambda_power: float = 1.0


def reward(metrics: LinkMetrics, r_min, p_elec: float, p_max: float,
           cfg: RewardConfig = RewardConfig()) -> tuple[float, int, int]:
    """Shared reward ``w_ee SEE/SEE_ref + w_j J - l1 * #QoS misses - l2 * [P_e > P_max]``."""
    rho1 = int(np.count_nonzero(metrics.rates < np.asarray(r_min)))
    rho2 = int(p_elec > p_max)
    r = (cfg.w_ee * metrics.see / cfg.see_ref + cfg.w_j * metrics.jain
         - cfg.lambda_qos * rho1 - cfg.lambda_power * rho2)
    return r, rho1, rho2


# ---------------------------------------------------------------- environment

@dataclass
class StepOutcome:
    reward: float
    qos_violations: int
    power_violation: int
    metrics: LinkMetrics
    obs_l: np.ndarray
    obs_m: np.ndarray
    done: bool
    info: dict = field(default_factory=dict)


@dataclass
class Snapshot:
    """Frozen per-configuration state used by the grid oracle."""
    positions: np.ndarray
    blockage: np.ndarray
    r_min: np.ndarray


def build_channel_model(cfg: ExperimentConfig, n_mirrors_override: Optional[int] = None) -> ChannelModel:
    s = cfg.scene
    aps = [LedAp(tuple(p), math.radians(s.ap_half_angle_deg)) for p in s.ap_positions]
    m = s.num_mirrors if n_mirrors_override is None else n_mirrors_override
    if m:
        centers = mirror_array_centers(s.irs_rows, s.irs_cols, s.irs_center, s.mirror_width,
                                       s.mirror_height, s.mirror_spacing, s.irs_wall)
    else:
        centers = np.zeros((0, 3))
    dets = [PhotoDetector((0.0, 0.0, 0.0), detector_normal(math.radians(d.get("azimuth_deg", 0.0)),
                                                           math.radians(d.get("elevation_deg", 90.0))),
                          d.get("area", 1e-4), math.radians(d.get("fov_deg", 85.0)))
            for d in s.detectors]
    return ChannelModel(aps, centers, np.full(len(centers), s.mirror_width * s.mirror_height),
                        np.full(len(centers), s.reflectance), [dets] * s.users, s.filter_gain)


class IrsNomaEnv:
    """Step/reset simulator; one instance is single-threaded and fully seeded."""

    def __init__(self, cfg: ExperimentConfig, seed: int = 0):
        self.cfg = cfg
        self.model = build_channel_model(cfg)
        self.k = cfg.scene.users
        self.l = self.model.num_aps
        self.m = self.model.num_mirrors
        lk = cfg.link
        self.link = noma.LinkParams(lk.p_elec, lk.bandwidth, lk.noise_psd, lk.responsivity)
        p = cfg.power
        self.power_cfg = power.PowerModelConfig(
            p.p_circuit_tx, p.p_led, p.p_amp, p.p_filter_tx, p.p_dac, p.p_element,
            p.p_circuit_rx, p.p_filter_rx, p.p_tia, p.p_adc, lk.p_max, p.per_device)
        e = cfg.env
        self.reward_cfg = RewardConfig(e.w_ee, e.w_j, e.see_ref, e.lambda_qos, e.lambda_power)
        self.blockage = BlockageProcess(e.p_block, e.blocked_duration, e.dt)
        room = np.asarray(cfg.scene.room, float)
        mgn = cfg.scene.wall_margin
        self.footprint = (np.array([mgn, mgn]), room[:2] - mgn)
        self._seed(seed)
        self._ready = False

    # dimensions ------------------------------------------------------------
    @property
    def obs_l_dim(self) -> int:
        return 2 * self.k + 2 * self.m

    @property
    def obs_m_dim(self) -> int:
        return 3 * self.k

    @property
    def act_l_dim(self) -> int:
        return self.k

    @property
    def act_m_dim(self) -> int:
        return 2 * self.m

    # lifecycle -------------------------------------------------------------
    def _seed(self, seed: int):
        self.rng_place = substream(seed, "env.placement")
        self.rng_mob = substream(seed, "env.mobility")
        self.rng_traffic = substream(seed, "env.traffic")
        self.rng_block = substream(seed, "env.blockage")

    def reset(self, seed: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
        if seed is not None:
            self._seed(seed)
        s, e = self.cfg.scene, self.cfg.env
        lo, hi = self.footprint
        self.heights = self.rng_place.uniform(*s.height_range, size=self.k)
        if s.user_positions is not None:
            fixed = np.asarray(s.user_positions, float)
            self.heights = fixed[:, 2].copy()
            self.mob = MobilityState(fixed[:, :2].copy(), fixed[:, :2].copy(), np.zeros(self.k),
                                     np.zeros(self.k), lo, hi, (0.0, 0.0), tuple(e.pause_range))
        else:
            self.mob = init_mobility(self.k, lo, hi, e.speed_range, e.pause_range, self.rng_place)
        self.alpha = np.full(self.k, 1.0 / self.k)
        self.angles = np.zeros((self.m, 2))
        self.r_min = sample_traffic(self.k, e.r_min_range, self.rng_traffic)
        self.mask = self.blockage.initial((self.k, self.l), self.rng_block)
        self.t = 0
        self._ready = True
        self._obs_sinr = self._sinr_now()
        return self.observe()

    @property
    def positions(self) -> np.ndarray:
        return np.column_stack([self.mob.pos, self.heights])

    def _sinr_now(self) -> np.ndarray:
        g = self.model.gains(self.positions, self.angles, self.mask)
        order = noma.sort_users_by_gain(g.combined)
        alpha = noma.enforce_inverse_order(self.alpha, order)
        return noma.sinr(alpha, g.combined, self.link, order)

    def observe(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._ready:
            raise EnvironmentNotReset("call reset() before observing")
        snr = np.log10(1.0 + self._obs_sinr)
        rmin = self.r_min / 1e6
        o_l = np.concatenate([snr, rmin, self.angles[:, 0], self.angles[:, 1]])
        o_m = np.concatenate([snr, self.alpha, rmin])
        return o_l, o_m

    def snapshot(self) -> Snapshot:
        return Snapshot(self.positions.copy(), self.mask.copy(), self.r_min.copy())

    def evaluate(self, alpha_simplex, angles, snap: Optional[Snapshot] = None,
                 changed_mirrors: Optional[int] = None) -> LinkMetrics:
        """Metrics for an action on the current (or a frozen) configuration, without stepping."""
        snap = snap or self.snapshot()
        g = self.model.gains(snap.positions, angles, snap.blockage)
        n_active = self.m if changed_mirrors is None else changed_mirrors
        return evaluate_link(g, alpha_simplex, self.link, self.l, n_active, self.power_cfg)

    def step(self, a_l, a_m) -> StepOutcome:
        """Apply a simplex power action and unit-box angle action, then advance time by ``dt``."""
        if not self._ready:
            raise EnvironmentNotReset("call reset() before step()")
        a_l = noma.check_simplex(a_l)
        if a_l.size != self.k:
            raise ValueError(f"power action has {a_l.size} entries, expected {self.k}")
        a_m = np.asarray(a_m, dtype=float).reshape(-1)
        if a_m.size != 2 * self.m:
            raise ValueError(f"angle action has {a_m.size} entries, expected {2 * self.m}")
        if np.any(np.abs(a_m) > 1.0 + 1e-12) or not np.all(np.isfinite(a_m)):
            raise ValueError("angle action must lie in [-1, 1]")
        new_angles = unit_to_angles(a_m)
        changed = int(np.count_nonzero(np.any(new_angles != self.angles, axis=1)))
        self.angles = new_angles
        n_active = changed if self.cfg.power.irs_power_changed_only else self.m
        met = self.evaluate(a_l, self.angles, changed_mirrors=n_active)
        self.alpha = met.alpha
        r, rho1, rho2 = reward(met, self.r_min, self.link.p_elec, self.power_cfg.p_max, self.reward_cfg)
        info = {"r_min": self.r_min.copy()}

        e = self.cfg.env
        if e.mobility and self.cfg.scene.user_positions is None:
            self.mob = rwp_step(self.mob, e.dt, self.rng_mob)
        if e.traffic_resample == "step":
            self.r_min = sample_traffic(self.k, e.r_min_range, self.rng_traffic)
        self.mask = self.blockage.step(self.mask, self.rng_block)
        self.t += 1
        self._obs_sinr = self._sinr_now()
        o_l, o_m = self.observe()
        return StepOutcome(r, rho1, rho2, met, o_l, o_m, self.t >= e.steps, info)
