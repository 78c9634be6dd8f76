"""Comparison schemes and the brute-force grid oracle.

All schemes drive the same :class:`~irsnoma.environment.IrsNomaEnv`; they
only differ in which quantities are learned:

* ``two_agent``          power agent + mirror agent, centralized critics
* ``single_agent_ddpg``  one DDPG agent emitting the joint action
* ``random_irs``         DDPG for power, mirror angles drawn uniformly once per episode
* ``no_irs``             DDPG for power in a scene without mirrors
* ``fixed_power``        fixed coefficients, DDPG for the mirror angles
* ``dqn_codebook``       DQN over a discrete power-profile x angle-preset codebook
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .config import ExperimentConfig, substream
from .drl import AgentSpec, EpisodeStats, ReplayBuffer, Scheme, eval_seed
from .environment import IrsNomaEnv, Snapshot
from .neural import AdamState, adam_update, clip_by_global_norm, init_mlp, serialize, soft_update


class TwoAgent(Scheme):
    name = "two_agent"


class SingleAgentDdpg(Scheme):
    name = "single_agent_ddpg"
    centralized = False

    def specs(self):
        k, m = self.env.k, self.env.m
        head = "softmax" if m == 0 else f"softmax:{k}|tanh:{2 * m}"
        return [AgentSpec("joint", "lm", k + 2 * m, list(self.cfg.agents.joint_hidden), head)]

    def compose(self, actions):
        k = self.env.k
        return actions[0][:k], actions[0][k:]


class RandomIrs(Scheme):
    name = "random_irs"
    centralized = False

    def __init__(self, env, cfg):
        super().__init__(env, cfg)
        self.frozen = np.zeros(2 * env.m)

    def specs(self):
        return [AgentSpec("l", "l", self.env.k, list(self.cfg.agents.power_hidden), "softmax")]

    def begin_episode(self, rng):
        self.frozen = rng.uniform(-1.0, 1.0, size=2 * self.env.m)

    def compose(self, actions):
        return actions[0], self.frozen


class NoIrs(Scheme):
    name = "no_irs"
    centralized = False

    @staticmethod
    def prepare_config(cfg):
        out = cfg.copy()
        out.scene.irs_rows = 0
        out.scene.irs_cols = 0
        return out

    def specs(self):
        return [AgentSpec("l", "l", self.env.k, list(self.cfg.agents.power_hidden), "softmax")]

    def compose(self, actions):
        return actions[0], np.zeros(0)


class FixedPower(Scheme):
    name = "fixed_power"
    centralized = False

    def __init__(self, env, cfg):
        super().__init__(env, cfg)
        fa = cfg.baseline.fixed_alpha
        self.alpha = np.full(env.k, 1.0 / env.k) if fa is None else np.asarray(fa, dtype=float)

    def specs(self):
        return [AgentSpec("m", "m", 2 * self.env.m, list(self.cfg.agents.angle_hidden), "tanh")]

    def compose(self, actions):
        return self.alpha, actions[0]


# ---------------------------------------------------------------- DQN over a codebook

def power_profiles(k: int, n: int) -> np.ndarray:
    """``n`` descending simplex points ``alpha_i proportional to r**i`` for ratios r from 1 down to 0.1."""
    ratios = np.linspace(1.0, 0.1, n) if n > 1 else np.array([1.0])
    prof = ratios[:, None] ** np.arange(k)[None, :]
    return prof / prof.sum(axis=1, keepdims=True)


def angle_presets(n: int) -> np.ndarray:
    """``n`` (yaw, roll) pairs in unit-box coordinates shared by every mirror.

    Two yaw values (+-1/2) times ``ceil(n/2)`` roll values spread uniformly
    inside (-1, 1), truncated to ``n``.
    """
    n_roll = max(1, math.ceil(n / 2))
    rolls = (np.arange(n_roll) + 0.5) / n_roll * 2 - 1
    pairs = [(yaw, roll) for yaw in (-0.5, 0.5) for roll in rolls]
    return np.array(pairs[:n], dtype=float)


class DqnCodebook:
    name = "dqn_codebook"
    centralized = False

    def __init__(self, env: IrsNomaEnv, cfg: ExperimentConfig):
        self.env, self.cfg = env, cfg
        b = cfg.baseline
        self.profiles = power_profiles(env.k, b.dqn_power_profiles)
        self.presets = angle_presets(b.dqn_angle_presets) if env.m else np.zeros((1, 2))
        self.n_actions = len(self.profiles) * len(self.presets)

    @staticmethod
    def prepare_config(cfg):
        return cfg

    def begin_episode(self, rng):
        pass

    @staticmethod
    def learner_from_blobs(nets: list, cfg: ExperimentConfig) -> "DqnLearner":
        (q, opt), (target, _) = nets
        return DqnLearner.from_nets(q, target, opt, cfg)

    def decode(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= index < self.n_actions:
            raise IndexError(f"action {index} outside codebook of {self.n_actions}")
        p, a = divmod(int(index), len(self.presets))
        return self.profiles[p], np.tile(self.presets[a], self.env.m)


class DqnLearner:
    """Q-network over discrete actions with a softly updated target network."""

    def __init__(self, obs_dim: int, n_actions: int, hidden, lr: float, gamma: float, tau: float,
                 rng: np.random.Generator, grad_clip: Optional[float] = 1.0):
        self.q = init_mlp([obs_dim, *hidden, n_actions], ["relu"] * len(hidden) + ["linear"], rng)
        self.target = self.q.copy()
        self.opt = AdamState.for_net(self.q, lr)
        self.gamma, self.tau, self.grad_clip = gamma, tau, grad_clip
        self.n_actions = n_actions

    @classmethod
    def from_nets(cls, q, target, opt, cfg: ExperimentConfig) -> "DqnLearner":
        out = cls.__new__(cls)
        out.q, out.target, out.opt = q, target, opt
        out.gamma, out.tau, out.grad_clip = cfg.agents.gamma, cfg.agents.tau, cfg.agents.grad_clip
        out.n_actions = q.out_dim
        return out

    def to_blobs(self) -> list:
        return [serialize(self.q, self.opt), serialize(self.target)]

    def greedy(self, obs) -> int:
        # np.argmax returns the first maximum, i.e. the lowest index on ties
        return int(np.argmax(self.q(obs)))

    def act(self, obs, epsilon: float, rng: np.random.Generator) -> int:
        if epsilon > 0 and rng.random() < epsilon:
            return int(rng.integers(self.n_actions))
        return self.greedy(obs)

    def update(self, batch: dict) -> float:
        q_next = self.target(batch["o2"]).max(axis=1)
        y = batch["r"][:, 0] + self.gamma * (1.0 - batch["done"][:, 0]) * q_next
        q, tape = self.q.forward(batch["o"])
        idx = batch["a"][:, 0].astype(int)
        rows = np.arange(q.shape[0])
        err = q[rows, idx] - y
        g = np.zeros_like(q)
        g[rows, idx] = 2.0 * err / err.size
        grads, _ = self.q.backward(tape, g)
        adam_update(self.q, clip_by_global_norm(grads, self.grad_clip), self.opt)
        soft_update(self.target, self.q, self.tau)
        return float(np.mean(err * err))


@dataclass
class DqnResult:
    scheme: DqnCodebook
    learner: DqnLearner
    env: IrsNomaEnv
    records: list
    seed: int
    cfg: ExperimentConfig
    rngs: dict
    epsilon: float = 1.0
    episodes_done: int = 0


def train_dqn(cfg: ExperimentConfig, seed: int = 0, run_id: str = "",
              on_episode: Optional[Callable] = None) -> DqnResult:
    env = IrsNomaEnv(cfg, seed)
    sch = DqnCodebook(env, cfg)
    a, b = cfg.agents, cfg.baseline
    odim = env.obs_l_dim + env.obs_m_dim
    learner = DqnLearner(odim, sch.n_actions, b.dqn_hidden, b.dqn_lr, a.gamma, a.tau,
                         substream(seed, "init"), a.grad_clip)
    buf = ReplayBuffer(a.buffer_size, {"o": odim, "a": 1, "r": 1, "o2": odim, "done": 1})
    explore, replay = substream(seed, "exploration"), substream(seed, "replay")
    eps = b.dqn_eps_start
    result = DqnResult(sch, learner, env, [], seed, cfg, {"explore": explore, "replay": replay}, eps)
    for ep in range(a.episodes):
        o = np.concatenate(env.reset())
        stats = EpisodeStats()
        done = False
        while not done:
            idx = learner.act(o, eps, explore)
            out = env.step(*sch.decode(idx))
            o2 = np.concatenate([out.obs_l, out.obs_m])
            done = out.done
            buf.add(o=o, a=idx, r=out.reward, o2=o2, done=float(done))
            if len(buf) >= a.batch_size:
                learner.update(buf.sample(a.batch_size, replay))
            eps = max(b.dqn_eps_end, eps * b.dqn_eps_decay)
            stats.add(out)
            o = o2
        result.records.append(stats.record(run_id, seed, ep, eps))
        result.epsilon = eps
        result.episodes_done = ep + 1
        if on_episode is not None:
            on_episode(ep, result)
    return result


def evaluate_dqn(learner: DqnLearner, cfg: ExperimentConfig, episodes: int, seed: int = 0,
                 run_id: str = "") -> list:
    """Greedy rollouts on the evaluation environment, like :func:`irsnoma.drl.evaluate`."""
    env = IrsNomaEnv(cfg, eval_seed(seed))
    sch = DqnCodebook(env, cfg)
    records = []
    for ep in range(episodes):
        o = np.concatenate(env.reset())
        stats = EpisodeStats()
        done = False
        while not done:
            out = env.step(*sch.decode(learner.greedy(o)))
            stats.add(out)
            done = out.done
            o = np.concatenate([out.obs_l, out.obs_m])
        records.append(stats.record(run_id, seed, ep, 0.0))
    return records


SCHEME_CLASSES = {c.name: c for c in (TwoAgent, SingleAgentDdpg, RandomIrs, NoIrs, FixedPower, DqnCodebook)}


# ---------------------------------------------------------------- grid oracle

class BudgetExceeded(ValueError):
    pass


def simplex_grid(k: int, steps: int) -> np.ndarray:
    """All coefficient vectors with entries in multiples of ``1/steps`` summing to 1."""
    pts = [np.diff([0, *c, steps]) for c in itertools.combinations_with_replacement(range(steps + 1), k - 1)]
    return np.array(pts, dtype=float).reshape(-1, k) / steps


@dataclass
class OracleResult:
    alpha: np.ndarray       # per-user coefficients after inverse ordering
    angles: np.ndarray      # (M, 2) yaw/roll
    objective: float
    feasible: bool
    n_points: int
    n_feasible: int
    table: Optional[list] = None


def grid_oracle(env: IrsNomaEnv, snap: Optional[Snapshot] = None, alpha_steps: int = 20,
                angle_steps: int = 9, budget: int = 1_000_000, keep_table: bool = False) -> OracleResult:
    """Exhaustive search of J * SEE over a simplex grid x a per-angle grid.

    Points violating a user's minimum rate or the transmit power budget are
    infeasible; the best feasible point is returned (or the best overall, with
    ``feasible=False``, if none qualifies). Ties keep the first point in
    enumeration order, so the result is deterministic.
    """
    if env.k > 3 or env.m > 2:
        raise BudgetExceeded(f"oracle limited to K <= 3 and M <= 2 (got K={env.k}, M={env.m})")
    snap = snap or env.snapshot()
    alphas = simplex_grid(env.k, alpha_steps)
    axis = np.linspace(-math.pi / 2, math.pi / 2, angle_steps)
    n_angle = angle_steps ** (2 * env.m)
    total = len(alphas) * n_angle
    if total > budget:
        raise BudgetExceeded(f"{total} grid points exceed the budget of {budget}")
    p_ok = env.link.p_elec <= env.power_cfg.p_max
    best = None
    best_any = None
    n_feasible = 0
    table = [] if keep_table else None
    for combo in itertools.product(axis, repeat=2 * env.m):
        angles = np.array(combo, dtype=float).reshape(-1, 2)
        for a in alphas:
            met = env.evaluate(a, angles, snap)
            feas = p_ok and bool(np.all(met.rates >= snap.r_min))
            n_feasible += feas
            if keep_table:
                table.append((tuple(met.alpha), tuple(angles.reshape(-1)), met.objective, feas))
            if best_any is None or met.objective > best_any[2]:
                best_any = (met.alpha, angles, met.objective)
            if feas and (best is None or met.objective > best[2]):
                best = (met.alpha, angles, met.objective)
    chosen, feasible = (best, True) if best is not None else (best_any, False)
    return OracleResult(chosen[0], chosen[1], float(chosen[2]), feasible, total, n_feasible, table)
