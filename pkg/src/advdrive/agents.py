"""Per-algorithm learners behind one act/observe interface, plus frozen test-time policies.

A learner owns one parameter store and ``n_workers`` worker slots; worker ``w``
drives the learner's vehicle in world ``w``. The harness steps every world once
per tick, feeds each transition to ``observe`` and calls ``tick`` afterwards.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
import torch

from .continuous import ActorCriticBundle, NoiseConfig, ddpg_update, exploration_action, td3_update
from .discrete import (
    AlgoConfig,
    DQNState,
    ParameterStore,
    ReplayBuffer,
    Trajectory,
    WorkerBatch,
    a2c_update,
    a3c_apply,
    actor_critic_gradient,
    dqn_update,
    epsilon_greedy,
    gae,
    impala_learn_step,
    linear_epsilon,
    normalize_advantages,
    ppo_terms,
    successor_values,
)
from .env import OBS_SIZE, decode_continuous_action, decode_discrete_action
from .errors import ConfigurationError
from .nets import NetworkSpec, ParameterSet, backward, categorical_log_probs, forward, init_network
from .world import scripted_traffic_policy

ALGO_TAGS = ("PPO", "A2C", "A3C", "IMPALA", "DQN", "DDPG", "TD3")
CONTINUOUS_ALGOS = ("DDPG", "TD3")
POLICY_GRADIENT_ALGOS = ("PPO", "A2C", "A3C", "IMPALA")


def action_kind(algo: str) -> str:
    check_algo(algo)
    return "continuous" if algo in CONTINUOUS_ALGOS else "discrete"


def check_algo(algo: str) -> None:
    if algo not in ALGO_TAGS:
        raise ConfigurationError(f"unknown algorithm {algo!r}; expected one of {ALGO_TAGS}")


@dataclass(frozen=True)
class NetConfig:
    obs_pool: int = 1
    frame_stack: int = 1
    convs: tuple = ((16, 8, 4), (32, 4, 2))
    hidden: tuple = (256,)
    activation: str = "relu"

    def input_shape(self) -> tuple:
        if OBS_SIZE % self.obs_pool:
            raise ConfigurationError(f"obs_pool {self.obs_pool} must divide {OBS_SIZE}")
        if self.frame_stack < 1:
            raise ConfigurationError("frame_stack must be >= 1")
        n = OBS_SIZE // self.obs_pool
        return (n, n, 3 * self.frame_stack)


def network_specs(algo: str, net: NetConfig) -> dict:
    """Named networks an algorithm trains; the first entry is the deployable policy."""
    check_algo(algo)
    base = dict(input_shape=net.input_shape(), convs=net.convs, hidden=net.hidden, activation=net.activation)
    if algo in POLICY_GRADIENT_ALGOS:
        return {"policy": NetworkSpec(heads=("logits", "value"), **base)}
    if algo == "DQN":
        return {"q": NetworkSpec(heads=("qvalues",), **base)}
    return {"actor": NetworkSpec(heads=("mean",), **base), "critic": NetworkSpec(heads=("critic",), **base)}


def pool_observation(obs: np.ndarray, k: int) -> np.ndarray:
    """Average-pool an (H, W, C) observation by ``k`` in both spatial axes."""
    if k == 1:
        return np.asarray(obs, dtype=np.float32)
    h, w, c = obs.shape
    # summing strided slices is ~6x faster than mean over two reshaped axes
    blocks = np.asarray(obs, dtype=np.float32).reshape(h // k, k, w // k, k, c)
    rows = blocks[:, 0].copy()
    for i in range(1, k):
        rows += blocks[:, i]
    out = rows[:, :, 0].copy()
    for j in range(1, k):
        out += rows[:, :, j]
    return out * np.float32(1.0 / (k * k))


class ObservationPipeline:
    """Pools raw observations and stacks the last ``stack`` frames along channels
    (oldest first), so a feed-forward network can perceive motion."""

    def __init__(self, pool: int = 1, stack: int = 1):
        self.pool = pool
        self.stack = stack

    @classmethod
    def for_spec(cls, spec: NetworkSpec) -> "ObservationPipeline":
        h, _, c = spec.input_shape
        return cls(OBS_SIZE // h, c // 3)

    def initial(self, raw) -> np.ndarray:
        frame = pool_observation(raw, self.pool)
        return frame if self.stack == 1 else np.concatenate([frame] * self.stack, axis=-1)

    def advance(self, state, raw) -> np.ndarray:
        frame = pool_observation(raw, self.pool)
        return frame if self.stack == 1 else np.concatenate([state[..., 3:], frame], axis=-1)


def to_command(action):
    if isinstance(action, (int, np.integer)):
        return decode_discrete_action(int(action))
    return decode_continuous_action(action)


def greedy_action(params: ParameterSet, obs):
    """Noise-free action for any deployable network kind."""
    with torch.no_grad():
        out = forward(params, obs)
    if "logits" in out:
        return int(torch.argmax(out["logits"]))
    if "qvalues" in out:
        return int(torch.argmax(out["qvalues"]))
    return out["mean"].double().numpy()


# ---------------------------------------------------------------- test-time policies

class FrozenPolicy:
    """Greedy policy over a fixed ParameterSet; never mutates its parameters."""

    def __init__(self, params: ParameterSet, name: str = ""):
        self.params = params
        self.name = name
        self.pipe = ObservationPipeline.for_spec(params.spec)
        self._states = {}

    def act(self, obs, world=None, agent_id=None):
        prev = self._states.get(agent_id)
        if prev is None or world is None or world.t == 0:
            state = self.pipe.initial(obs)
        else:
            state = self.pipe.advance(prev, obs)
        self._states[agent_id] = state
        return to_command(greedy_action(self.params, state))


class BrakePolicy:
    name = "brake"

    def act(self, obs, world=None, agent_id=None):
        return decode_discrete_action(7)  # straight, full brake


class ScriptedFollowerPolicy:
    """Lane-following rule driver with privileged access to the world state."""

    name = "scripted-follower"

    def act(self, obs, world=None, agent_id=None):
        return scripted_traffic_policy(world, agent_id)


# ---------------------------------------------------------------- learners

def _stack(xs) -> np.ndarray:
    return np.stack(xs).astype(np.float32)


@dataclass
class _Segment:
    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    resets: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    values: list = field(default_factory=list)
    logits: list = field(default_factory=list)
    cut_obs: dict = field(default_factory=dict)
    last_next_obs: np.ndarray | None = None

    def __len__(self):
        return len(self.rewards)

    def add(self, obs, action, aux, reward, next_obs, terminal, reset):
        t = len(self.rewards)
        self.obs.append(obs)
        self.actions.append(action)
        self.rewards.append(reward)
        self.dones.append(terminal)
        self.resets.append(reset)
        self.log_probs.append(aux["logp"])
        self.values.append(aux["value"])
        self.logits.append(aux["logits"])
        if reset and not terminal:
            self.cut_obs[t] = next_obs
        self.last_next_obs = None if reset else next_obs

    def trajectory(self, version: int) -> Trajectory:
        return Trajectory(
            obs=_stack(self.obs),
            actions=np.asarray(self.actions, dtype=np.int64),
            rewards=self.rewards,
            dones=self.dones,
            behaviour_log_probs=self.log_probs,
            values=np.asarray(self.values, dtype=np.float64),
            next_obs_last=self.last_next_obs,
            resets=np.asarray(self.resets, dtype=bool),
            cut_obs=dict(self.cut_obs),
            policy_version=version,
        )


class Learner:
    algo: str = ""

    def __init__(self, net: NetConfig, cfg: AlgoConfig, noise: NoiseConfig, seed: int, n_workers: int = 1):
        self.net = net
        self.cfg = cfg
        self.noise = noise
        self.seed = seed
        self.n_workers = n_workers
        self.rng = np.random.default_rng(seed)
        self.specs = network_specs(self.algo, net)
        self.pipe = ObservationPipeline(net.obs_pool, net.frame_stack)
        self.env_steps = 0
        self.updates = 0

    @property
    def continuous(self) -> bool:
        return self.algo in CONTINUOUS_ALGOS

    def initial_state(self, raw) -> np.ndarray:
        return self.pipe.initial(raw)

    def next_state(self, state, raw) -> np.ndarray:
        return self.pipe.advance(state, raw)

    def policy_params(self) -> ParameterSet:
        raise NotImplementedError

    def act(self, worker: int, obs, explore: bool = True):
        raise NotImplementedError

    def observe(self, worker, obs, action, aux, reward, next_obs, terminal, reset) -> list:
        raise NotImplementedError

    def tick(self) -> list:
        return []


class _PolicyGradientLearner(Learner):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.store = ParameterStore(init_network(self.specs["policy"], self.seed), lr=self.cfg.lr, grad_clip=self.cfg.grad_clip)
        self.segments = [_Segment() for _ in range(self.n_workers)]

    def policy_params(self) -> ParameterSet:
        return self.store.params

    def worker_params(self, worker: int) -> ParameterSet:
        return self.store.params

    def act(self, worker, obs, explore=True):
        params = self.worker_params(worker)
        with torch.no_grad():
            out = forward(params, obs)
            logp_all = categorical_log_probs(out["logits"].double()).numpy()
        if explore:
            cdf = np.cumsum(np.exp(logp_all))
            a = int(min(np.searchsorted(cdf, self.rng.random() * cdf[-1], side="right"), len(cdf) - 1))
        else:
            a = int(np.argmax(logp_all))
        aux = {"logp": float(logp_all[a]), "value": float(out["value"]), "logits": out["logits"].numpy().copy()}
        return a, aux

    def observe(self, worker, obs, action, aux, reward, next_obs, terminal, reset):
        self.env_steps += 1
        self.segments[worker].add(obs, action, aux, reward, next_obs, terminal, reset)
        return []

    def _value_fn(self, params):
        def fn(o):
            with torch.no_grad():
                return forward(params, o)["value"].double().numpy()

        return fn

    def _gae_batch(self, seg: _Segment, params: ParameterSet) -> dict:
        traj = seg.trajectory(0)
        value_fn = self._value_fn(params)
        boot = 0.0 if traj.next_obs_last is None else float(value_fn(traj.next_obs_last[None])[0])
        cut_values = {t: float(value_fn(o[None])[0]) for t, o in traj.cut_obs.items()}
        nv = successor_values(traj.values, boot, traj.resets, cut_values)
        adv, ret = gae(traj.rewards, traj.values, nv, traj.dones, self.cfg.gamma, self.cfg.gae_lambda, traj.resets)
        return {
            "obs": traj.obs,
            "actions": traj.actions,
            "advantages": adv,
            "returns": ret,
            "old_log_probs": traj.behaviour_log_probs,
            "old_logits": np.stack(seg.logits),
        }


class PPOLearner(_PolicyGradientLearner):
    algo = "PPO"

    def tick(self):
        if sum(len(s) for s in self.segments) < self.cfg.rollout_steps:
            return []
        params = self.store.params
        parts = [self._gae_batch(s, params) for s in self.segments if len(s)]
        self.segments = [_Segment() for _ in range(self.n_workers)]
        data = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
        n = len(data["actions"])
        stats = []
        for _ in range(self.cfg.ppo_epochs):
            order = self.rng.permutation(n)
            for lo in range(0, n, self.cfg.batch_size):
                idx = order[lo : lo + self.cfg.batch_size]
                mb = {k: v[idx] for k, v in data.items()}
                mb["advantages"] = normalize_advantages(mb["advantages"])
                terms = {}

                def loss_fn(p):
                    t = ppo_terms(p, mb, self.cfg)
                    terms.update({k: float(v.detach()) for k, v in t.items()})
                    return t["loss"]

                _, grads = backward(self.store.params, loss_fn, clip_norm=None)
                self.store.apply(grads)
                self.updates += 1
                stats.append(terms)
        return stats


class A2CLearner(_PolicyGradientLearner):
    """Synchronous coordinator: all workers' segments share one parameter version."""

    algo = "A2C"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._ticks = 0

    def tick(self):
        self._ticks += 1
        if self._ticks < self.cfg.segment_steps:
            return []
        self._ticks = 0
        params = self.store.params
        batches = [WorkerBatch(self._gae_batch(s, params), self.store.version) for s in self.segments if len(s)]
        self.segments = [_Segment() for _ in range(self.n_workers)]
        if not batches:
            return []
        a2c_update(self.store, batches, self.cfg)
        self.updates += 1
        return [{"updates": 1.0}]


class A3CLearner(_PolicyGradientLearner):
    """Each worker acts with its own snapshot and applies its gradient as soon as its
    segment is full, regardless of how far the shared parameters have moved."""

    algo = "A3C"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.snapshots = [self.store.snapshot() for _ in range(self.n_workers)]
        self.staleness = []

    def worker_params(self, worker):
        return self.snapshots[worker][0]

    def observe(self, worker, obs, action, aux, reward, next_obs, terminal, reset):
        super().observe(worker, obs, action, aux, reward, next_obs, terminal, reset)
        seg = self.segments[worker]
        if len(seg) < self.cfg.segment_steps:
            return []
        params, version = self.snapshots[worker]
        grads = actor_critic_gradient(params, self._gae_batch(seg, params), self.cfg)
        self.staleness.append(self.store.version - version)
        a3c_apply(grads, self.store)
        self.updates += 1
        self.segments[worker] = _Segment()
        self.snapshots[worker] = self.store.snapshot()
        return [{"staleness": float(self.staleness[-1])}]


class IMPALALearner(_PolicyGradientLearner):
    """Actors push trajectories tagged with their behaviour version; the learner
    consumes the queue once per tick with V-trace correction."""

    algo = "IMPALA"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.snapshots = [self.store.snapshot() for _ in range(self.n_workers)]
        self.queue = deque()

    def worker_params(self, worker):
        return self.snapshots[worker][0]

    def observe(self, worker, obs, action, aux, reward, next_obs, terminal, reset):
        super().observe(worker, obs, action, aux, reward, next_obs, terminal, reset)
        seg = self.segments[worker]
        if len(seg) >= self.cfg.segment_steps:
            self.queue.append(seg.trajectory(self.snapshots[worker][1]))
            self.segments[worker] = _Segment()
            self.snapshots[worker] = self.store.snapshot()
        return []

    def tick(self):
        if impala_learn_step(self.store, self.queue, self.cfg) is None:
            return []
        self.updates += 1
        return [{"updates": 1.0}]


class DQNLearner(Learner):
    algo = "DQN"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        q = init_network(self.specs["q"], self.seed)
        self.state = DQNState(q, q.clone())
        self.buffer = ReplayBuffer(self.cfg.buffer_capacity, seed=self.seed + 1)

    def policy_params(self):
        return self.state.params

    def act(self, worker, obs, explore=True):
        with torch.no_grad():
            q = forward(self.state.params, obs)["qvalues"].numpy()
        eps = linear_epsilon(self.env_steps, self.cfg) if explore else 0.0
        return epsilon_greedy(q, eps, self.rng), None

    def observe(self, worker, obs, action, aux, reward, next_obs, terminal, reset):
        self.env_steps += 1
        self.buffer.add(obs, action, reward, next_obs, terminal)
        if (
            self.env_steps < self.cfg.learning_starts
            or self.env_steps % self.cfg.train_every
            or len(self.buffer) < self.cfg.batch_size
        ):
            return []
        loss = dqn_update(self.state, self.buffer.sample(self.cfg.batch_size), self.cfg)
        self.updates += 1
        return [{"loss": loss}]


class _DeterministicPolicyLearner(Learner):
    n_critics = 1

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        actor = init_network(self.specs["actor"], self.seed)
        critics = [init_network(self.specs["critic"], self.seed + 1 + i) for i in range(self.n_critics)]
        self.bundle = ActorCriticBundle.create(actor, critics)
        self.buffer = ReplayBuffer(self.cfg.buffer_capacity, seed=self.seed + 101)
        self.update_rng = np.random.default_rng(self.seed + 202)

    def policy_params(self):
        return self.bundle.actor

    def act(self, worker, obs, explore=True):
        # uniform random actions until learning starts, so the replay buffer is not
        # shaped by the initial actor's bias (a braking mean never leaves the spawn)
        if explore and self.env_steps < self.cfg.learning_starts:
            return self.rng.uniform(-1.0, 1.0, 2), None
        sigma = self.noise.sigma_explore if explore else 0.0
        return exploration_action(self.bundle.actor, obs, sigma, self.rng), None

    def _update(self, batch) -> dict:
        raise NotImplementedError

    def observe(self, worker, obs, action, aux, reward, next_obs, terminal, reset):
        self.env_steps += 1
        self.buffer.add(obs, np.asarray(action, dtype=np.float32), reward, next_obs, terminal)
        if (
            self.env_steps < self.cfg.learning_starts
            or self.env_steps % self.cfg.train_every
            or len(self.buffer) < self.cfg.batch_size
        ):
            return []
        stats = self._update(self.buffer.sample(self.cfg.batch_size))
        self.updates += 1
        return [stats]


class DDPGLearner(_DeterministicPolicyLearner):
    algo = "DDPG"

    def _update(self, batch):
        return ddpg_update(self.bundle, batch, self.cfg, self.noise)


class TD3Learner(_DeterministicPolicyLearner):
    algo = "TD3"
    n_critics = 2

    def _update(self, batch):
        return td3_update(self.bundle, batch, self.cfg, self.noise, self.update_rng)


LEARNERS = {
    "PPO": PPOLearner,
    "A2C": A2CLearner,
    "A3C": A3CLearner,
    "IMPALA": IMPALALearner,
    "DQN": DQNLearner,
    "DDPG": DDPGLearner,
    "TD3": TD3Learner,
}


def make_learner(algo: str, net: NetConfig, cfg: AlgoConfig, noise: NoiseConfig, seed: int, n_workers: int = 1) -> Learner:
    check_algo(algo)
    return LEARNERS[algo](net, cfg, noise, seed, n_workers)
