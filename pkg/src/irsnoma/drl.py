"""Actor-critic training with centralized critics and decentralized actors.

The same machinery runs the cooperative two-agent scheme (power agent +
mirror agent, each critic sees both observations and both actions) and the
single-agent DDPG baselines (one agent, critic sees its own observation and
action). Schemes only differ in which agents exist and how their outputs are
turned into environment actions; see :mod:`irsnoma.baselines`.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import AgentsConfig, ExperimentConfig, substream
from .environment import IrsNomaEnv
from .neural import (AdamState, CheckpointError, Mlp, adam_update, apply_activation, clip_by_global_norm,
                     deserialize, init_mlp, serialize, soft_update)

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("run_id", "seed", "episode", "mean_reward", "sum_rate", "see", "jain", "objective",
                  "qos_violations", "power_violations", "sigma")


# ---------------------------------------------------------------- replay

class ReplayBuffer:
    """Fixed-capacity FIFO store of transitions held in preallocated arrays."""

    def __init__(self, capacity: int, dims: dict):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.dims = dict(dims)
        self.data = {k: np.zeros((capacity, d)) for k, d in self.dims.items()}
        self.ptr = 0
        self.size = 0
        self.inserted = 0

    def __len__(self) -> int:
        return self.size

    def add(self, **fields) -> None:
        if set(fields) != set(self.dims):
            raise KeyError(f"transition fields {sorted(fields)} != {sorted(self.dims)}")
        for k, v in fields.items():
            self.data[k][self.ptr] = v
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.inserted += 1

    def sample(self, n: int, rng: np.random.Generator) -> dict:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=n)
        return {k: v[idx] for k, v in self.data.items()}

    def ordered(self, key: str) -> np.ndarray:
        """Stored values of ``key`` from oldest to newest."""
        if self.size < self.capacity:
            return self.data[key][:self.size].copy()
        return np.concatenate([self.data[key][self.ptr:], self.data[key][:self.ptr]])


# ---------------------------------------------------------------- exploration

@dataclass
class ExplorationSchedule:
    sigma0: float = 0.2
    decay: float = 0.9999
    sigma_min: float = 0.01
    steps: int = 0

    @property
    def sigma(self) -> float:
        return max(self.sigma_min, self.sigma0 * self.decay ** self.steps)

    def advance(self) -> None:
        self.steps += 1


# ---------------------------------------------------------------- agents

OBS_KEYS = {"l": ("o_l",), "m": ("o_m",), "lm": ("o_l", "o_m")}


@dataclass
class AgentSpec:
    name: str
    obs: str          # "l", "m" or "lm"
    act_dim: int
    hidden: list
    head: str         # activation tag of the actor output layer


@dataclass
class AgentBundle:
    spec: AgentSpec
    actor: Mlp
    critic: Mlp
    target_actor: Mlp
    target_critic: Mlp
    actor_opt: AdamState
    critic_opt: AdamState

    def observation(self, batch: dict, suffix: str = "") -> np.ndarray:
        keys = OBS_KEYS[self.spec.obs]
        if len(keys) == 1:
            return batch[keys[0] + suffix]
        return np.concatenate([batch[k + suffix] for k in keys], axis=-1)


def make_agent(spec: AgentSpec, obs_dim: int, critic_in: int, cfg: AgentsConfig,
               rng: np.random.Generator) -> AgentBundle:
    hidden_tags = ["relu"] * len(spec.hidden)
    actor = init_mlp([obs_dim, *spec.hidden, spec.act_dim], hidden_tags + [spec.head], rng)
    critic = init_mlp([critic_in, *cfg.critic_hidden, 1], ["relu"] * len(cfg.critic_hidden) + ["linear"], rng)
    return AgentBundle(spec, actor, critic, actor.copy(), critic.copy(),
                       AdamState.for_net(actor, cfg.lr_actor), AdamState.for_net(critic, cfg.lr_critic))


def select_action(agent: AgentBundle, obs, sigma: float, rng: Optional[np.random.Generator]) -> np.ndarray:
    """Actor output with Gaussian noise added before the output head.

    Re-applying the head after the noise keeps power actions on the simplex
    and angle actions in [-1, 1]. ``sigma = 0`` is the deterministic policy.
    """
    obs = np.asarray(obs, dtype=float)
    if obs.shape[-1] != agent.actor.in_dim:
        raise ValueError(f"{agent.spec.name}: observation has {obs.shape[-1]} entries, "
                         f"expected {agent.actor.in_dim}")
    z, _ = agent.actor.forward(obs, pre_head=True)
    if sigma > 0:
        z = z + rng.normal(0.0, sigma, size=z.shape)
    return apply_activation(agent.spec.head, z)


class Learner:
    """Holds the agents and performs the per-step critic/actor/target updates.

    With ``centralized`` every critic scores ``(o_l, o_m, a_1, ..., a_n)``;
    otherwise each critic scores the agent's own ``(o, a)``.
    """

    def __init__(self, agents: list, centralized: bool, cfg: AgentsConfig):
        self.agents = agents
        self.centralized = centralized
        self.cfg = cfg
        self.gamma = cfg.gamma
        self.tau = cfg.tau

    def critic_input(self, agent: AgentBundle, batch: dict, actions: list, suffix: str = "") -> np.ndarray:
        if self.centralized:
            return np.concatenate([batch["o_l" + suffix], batch["o_m" + suffix], *actions], axis=-1)
        i = self.agents.index(agent)
        return np.concatenate([agent.observation(batch, suffix), actions[i]], axis=-1)

    def batch_actions(self, batch: dict) -> list:
        return [batch["a_" + a.spec.name] for a in self.agents]

    def critic_target(self, agent: AgentBundle, batch: dict) -> np.ndarray:
        """``y = r + gamma * (1 - done) * Q'(o', mu'(o'))`` with every agent's target actor."""
        next_actions = [a.target_actor(a.observation(batch, "2")) for a in self.agents]
        q_next = agent.target_critic(self.critic_input(agent, batch, next_actions, "2"))[:, 0]
        return batch["r"][:, 0] + self.gamma * (1.0 - batch["done"][:, 0]) * q_next

    def critic_update(self, agent: AgentBundle, batch: dict, y: np.ndarray) -> float:
        """One Adam step on the mean squared TD error; returns the pre-step loss."""
        x = self.critic_input(agent, batch, self.batch_actions(batch))
        q, tape = agent.critic.forward(x)
        err = q[:, 0] - y
        loss = float(np.mean(err * err))
        grads, _ = agent.critic.backward(tape, (2.0 / err.size) * err[:, None])
        adam_update(agent.critic, clip_by_global_norm(grads, self.cfg.grad_clip), agent.critic_opt)
        return loss

    def actor_update(self, agent: AgentBundle, batch: dict) -> float:
        """Deterministic policy gradient step: ascend the critic through this agent's action.

        Other agents' actions are taken from the batch. Returns the mean Q before the step.
        """
        i = self.agents.index(agent)
        a_i, a_tape = agent.actor.forward(agent.observation(batch))
        actions = self.batch_actions(batch)
        actions[i] = a_i
        x = self.critic_input(agent, batch, actions)
        q, c_tape = agent.critic.forward(x)
        n = q.shape[0]
        _, dx = agent.critic.backward(c_tape, np.full_like(q, -1.0 / n), param_grads=False)
        # locate this agent's action inside the critic input
        start = x.shape[1] - sum(a.shape[1] for a in actions[i:])
        da = dx[:, start:start + a_i.shape[1]]
        head_grad = None
        if self.cfg.preact_reg:
            # L2 pull on the pre-head outputs keeps softmax/tanh heads out of saturation
            z = a_tape.pre[-1]
            head_grad = (2.0 * self.cfg.preact_reg / n) * z
        grads, _ = agent.actor.backward(a_tape, da, head_grad=head_grad)
        adam_update(agent.actor, clip_by_global_norm(grads, self.cfg.grad_clip), agent.actor_opt)
        return float(q.mean())

    def soft_update_targets(self) -> None:
        for a in self.agents:
            soft_update(a.target_actor, a.actor, self.tau)
            soft_update(a.target_critic, a.critic, self.tau)

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator, soft: bool = True) -> dict:
        out = {}
        for agent in self.agents:
            batch = buffer.sample(self.cfg.batch_size, rng)
            y = self.critic_target(agent, batch)
            out[agent.spec.name + "_critic_loss"] = self.critic_update(agent, batch, y)
            out[agent.spec.name + "_q"] = self.actor_update(agent, batch)
            if soft:
                soft_update(agent.target_actor, agent.actor, self.tau)
                soft_update(agent.target_critic, agent.critic, self.tau)
        return out


# ---------------------------------------------------------------- schemes

class Scheme:
    """Which agents act and how their outputs become ``(a_l, a_m)`` for the environment."""

    name = "two_agent"
    centralized = True

    def __init__(self, env: IrsNomaEnv, cfg: ExperimentConfig):
        self.env = env
        self.cfg = cfg

    def specs(self) -> list:
        a, k, m = self.cfg.agents, self.env.k, self.env.m
        return [AgentSpec("l", "l", k, list(a.power_hidden), "softmax"),
                AgentSpec("m", "m", 2 * m, list(a.angle_hidden), "tanh")]

    def begin_episode(self, rng: np.random.Generator) -> None:
        pass

    def compose(self, actions: list) -> tuple[np.ndarray, np.ndarray]:
        return actions[0], actions[1]

    @staticmethod
    def prepare_config(cfg: ExperimentConfig) -> ExperimentConfig:
        return cfg


def obs_dim(env: IrsNomaEnv, key: str) -> int:
    return {"l": env.obs_l_dim, "m": env.obs_m_dim, "lm": env.obs_l_dim + env.obs_m_dim}[key]


def build_learner(env: IrsNomaEnv, scheme: Scheme, cfg: ExperimentConfig, rng: np.random.Generator) -> Learner:
    specs = scheme.specs()
    agents = []
    total_act = sum(s.act_dim for s in specs)
    for s in specs:
        if scheme.centralized:
            c_in = env.obs_l_dim + env.obs_m_dim + total_act
        else:
            c_in = obs_dim(env, s.obs) + s.act_dim
        agents.append(make_agent(s, obs_dim(env, s.obs), c_in, cfg.agents, rng))
    return Learner(agents, scheme.centralized, cfg.agents)


def make_buffer(env: IrsNomaEnv, learner: Learner, capacity: int) -> ReplayBuffer:
    dims = {"o_l": env.obs_l_dim, "o_m": env.obs_m_dim, "r": 1, "o_l2": env.obs_l_dim,
            "o_m2": env.obs_m_dim, "done": 1}
    for a in learner.agents:
        dims["a_" + a.spec.name] = a.spec.act_dim
    return ReplayBuffer(capacity, dims)


# ---------------------------------------------------------------- metrics

@dataclass
class EpisodeStats:
    reward: float = 0.0
    sum_rate: float = 0.0
    see: float = 0.0
    jain: float = 0.0
    objective: float = 0.0
    qos: int = 0
    power: int = 0
    steps: int = 0

    def add(self, out) -> None:
        m = out.metrics
        self.reward += out.reward
        self.sum_rate += m.sum_rate
        self.see += m.see
        self.jain += m.jain
        self.objective += m.objective
        self.qos += out.qos_violations
        self.power += out.power_violation
        self.steps += 1

    def record(self, run_id: str, seed: int, episode: int, sigma: float) -> dict:
        n = max(self.steps, 1)
        return {"run_id": run_id, "seed": seed, "episode": episode, "mean_reward": self.reward / n,
                "sum_rate": self.sum_rate / n, "see": self.see / n, "jain": self.jain / n,
                "objective": self.objective / n, "qos_violations": self.qos,
                "power_violations": self.power, "sigma": sigma}


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    scheme: Scheme
    learner: Learner
    env: IrsNomaEnv
    schedule: ExplorationSchedule
    records: list
    seed: int
    cfg: ExperimentConfig
    rngs: dict = field(default_factory=dict)
    episodes_done: int = 0


def scheme_class(name: str):
    from . import baselines
    return baselines.SCHEME_CLASSES[name]


def train(cfg: ExperimentConfig, seed: int = 0, scheme: Optional[str] = None, run_id: str = "",
          on_episode: Optional[Callable[[int, TrainResult], None]] = None) -> TrainResult:
    """Run the training loop for ``cfg.agents.episodes`` episodes of ``cfg.env.steps`` steps.

    Every transition is stored; updates start once the buffer holds a full
    minibatch and then run every environment step.
    """
    name = scheme or cfg.run.scheme
    cls = scheme_class(name)
    if name == "dqn_codebook":
        from .baselines import train_dqn
        return train_dqn(cfg, seed, run_id, on_episode)
    cfg = cls.prepare_config(cfg)
    env = IrsNomaEnv(cfg, seed)
    sch = cls(env, cfg)
    rngs = {"init": substream(seed, "init"), "explore": substream(seed, "exploration"),
            "replay": substream(seed, "replay"), "baseline": substream(seed, "baseline")}
    learner = build_learner(env, sch, cfg, rngs["init"])
    a = cfg.agents
    buffer = make_buffer(env, learner, a.buffer_size)
    schedule = ExplorationSchedule(a.sigma0, a.sigma_decay, a.sigma_min)
    result = TrainResult(sch, learner, env, schedule, [], seed, cfg, rngs)
    per_step = a.target_update == "step"
    for ep in range(a.episodes):
        o_l, o_m = env.reset()
        sch.begin_episode(rngs["baseline"])
        stats = EpisodeStats()
        done = False
        while not done:
            obs = {"o_l": o_l, "o_m": o_m}
            acts = [select_action(ag, ag.observation(obs), schedule.sigma, rngs["explore"])
                    for ag in learner.agents]
            a_l, a_m = sch.compose(acts)
            out = env.step(a_l, a_m)
            done = out.done
            fields = {"o_l": o_l, "o_m": o_m, "r": out.reward, "o_l2": out.obs_l, "o_m2": out.obs_m,
                      "done": float(done)}
            for ag, act in zip(learner.agents, acts):
                fields["a_" + ag.spec.name] = act
            buffer.add(**fields)
            if len(buffer) >= a.batch_size:
                learner.update(buffer, rngs["replay"], soft=per_step)
            stats.add(out)
            schedule.advance()
            o_l, o_m = out.obs_l, out.obs_m
        if not per_step and len(buffer) >= a.batch_size:
            learner.soft_update_targets()
        result.records.append(stats.record(run_id, seed, ep, schedule.sigma))
        result.episodes_done = ep + 1
        if on_episode is not None:
            on_episode(ep, result)
    return result


# ---------------------------------------------------------------- evaluation

def eval_seed(seed: int) -> int:
    return zlib.crc32(f"eval:{seed}".encode())


def evaluate(scheme: Scheme, learner: Learner, cfg: ExperimentConfig, episodes: int, seed: int = 0,
             run_id: str = "") -> list:
    """Noise-free decentralized rollouts: each actor sees only its own observation.

    Nothing is stored or updated. The evaluation environment is seeded from
    ``seed`` alone, so different schemes with the same seed see identical user
    trajectories, traffic and blockage.
    """
    if hasattr(learner, "greedy"):
        from .baselines import evaluate_dqn
        return evaluate_dqn(learner, cfg, episodes, seed, run_id)
    cfg = scheme.prepare_config(cfg)
    env = IrsNomaEnv(cfg, eval_seed(seed))
    sch = type(scheme)(env, cfg)
    brng = substream(seed, "eval.baseline")
    records = []
    for ep in range(episodes):
        o_l, o_m = env.reset()
        sch.begin_episode(brng)
        stats = EpisodeStats()
        done = False
        while not done:
            local = {"o_l": o_l, "o_m": o_m}
            acts = [select_action(ag, ag.observation(local), 0.0, None) for ag in learner.agents]
            out = env.step(*sch.compose(acts))
            stats.add(out)
            done = out.done
            o_l, o_m = out.obs_l, out.obs_m
        records.append(stats.record(run_id, seed, ep, 0.0))
    return records


def summarize(records: list) -> dict:
    keys = ("mean_reward", "sum_rate", "see", "jain", "objective", "qos_violations", "power_violations")
    return {k: float(np.mean([r[k] for r in records])) for k in keys}


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"IRSC"
CKPT_VERSION = 1
# Layout (little-endian): magic | u16 version | u32 header length | UTF-8 JSON header
#   | u32 blob count | per blob: u32 length + network stream | u32 crc32 of all preceding bytes.
# Blobs per agent, in agent order: actor (+Adam), critic (+Adam), target actor, target critic.


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def save_checkpoint(path, result) -> None:
    """Write a training result (DDPG-family or DQN) to ``path``."""
    sched = getattr(result, "schedule", None)
    header = {"scheme": result.scheme.name, "seed": result.seed, "episode": result.episodes_done,
              "schedule_steps": sched.steps if sched else 0,
              "sigma": sched.sigma if sched else getattr(result, "epsilon", 0.0),
              "config": result.cfg.to_dict(),
              "rng": {k: _rng_state(r) for k, r in getattr(result, "rngs", {}).items()},
              "scheme_state": result.scheme.state() if hasattr(result.scheme, "state") else {}}
    if hasattr(result.learner, "to_blobs"):
        header["agents"] = []
        blobs = result.learner.to_blobs()
    else:
        header["agents"] = [a.spec.__dict__ for a in result.learner.agents]
        blobs = []
        for a in result.learner.agents:
            blobs += [serialize(a.actor, a.actor_opt), serialize(a.critic, a.critic_opt),
                      serialize(a.target_actor), serialize(a.target_critic)]
    h = json.dumps(header, sort_keys=True, default=_json_default).encode()
    parts = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(h)), h, struct.pack("<I", len(blobs))]
    for b in blobs:
        parts += [struct.pack("<I", len(b)), b]
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


@dataclass
class LoadedCheckpoint:
    header: dict
    cfg: ExperimentConfig
    scheme: Scheme
    learner: object   # Learner, or baselines.DqnLearner for the codebook scheme


def load_checkpoint(path) -> LoadedCheckpoint:
    from .config import from_dict
    try:
        data = open(path, "rb").read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if len(data) < 14 or data[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<HI", data[4:10])
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version}, this build reads {CKPT_VERSION}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checkpoint is corrupt (checksum mismatch, format version {version})")
    pos = 10 + hlen
    header = json.loads(body[10:pos])
    (count,) = struct.unpack("<I", body[pos:pos + 4])
    pos += 4
    nets = []
    for _ in range(count):
        (n,) = struct.unpack("<I", body[pos:pos + 4])
        nets.append(deserialize(body[pos + 4:pos + 4 + n]))
        pos += 4 + n
    cfg = from_dict(header["config"])
    cls = scheme_class(header["scheme"])
    env = IrsNomaEnv(cls.prepare_config(cfg), 0)
    scheme = cls(env, cfg)
    if hasattr(scheme, "load_state"):
        scheme.load_state(header.get("scheme_state", {}))
    if hasattr(cls, "learner_from_blobs"):
        return LoadedCheckpoint(header, cfg, scheme, cls.learner_from_blobs(nets, cfg))
    agents = []
    for i, spec_d in enumerate(header["agents"]):
        (actor, a_opt), (critic, c_opt), (ta, _), (tc, _) = nets[4 * i:4 * i + 4]
        agents.append(AgentBundle(AgentSpec(**spec_d), actor, critic, ta, tc, a_opt, c_opt))
    return LoadedCheckpoint(header, cfg, scheme, Learner(agents, scheme.centralized, cfg.agents))
