"""Discrete-action learners: PPO, synchronous/asynchronous actor-critic, V-trace, DQN.

Loss functions take a ParameterSet and a batch dict of arrays and return a
scalar torch tensor, so they plug straight into ``nets.backward``. Targets
(advantages, returns, V-trace values, TD targets) are computed outside the
differentiated graph.
"""
from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigurationError, NumericError, ProtocolError
from .nets import (
    GRAD_CLIP_NORM,
    AdamState,
    GradientSet,
    ParameterSet,
    adam_step,
    average_gradients,
    backward,
    categorical_log_probs,
    clip_gradients,
    forward,
)


@dataclass(frozen=True)
class AlgoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    kl_coef: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lr: float = 0.0005
    batch_size: int = 128
    rollout_steps: int = 2048
    ppo_epochs: int = 4
    grad_clip: float = GRAD_CLIP_NORM
    n_workers: int = 1
    segment_steps: int = 16  # per-worker segment length for A2C / A3C / IMPALA
    # DQN
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 100_000
    target_sync: int = 1000
    buffer_capacity: int = 50_000
    learning_starts: int = 1000
    train_every: int = 1
    huber_delta: float = 1.0
    # IMPALA
    rho_bar: float = 1.0
    c_bar: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.clip_eps <= 0.0:
            raise ConfigurationError("clip_eps must be positive")
        for name in ("batch_size", "rollout_steps", "ppo_epochs", "n_workers", "segment_steps", "target_sync", "buffer_capacity", "train_every"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")


@dataclass
class Trajectory:
    """One worker's contiguous segment of experience (may span episode boundaries).

    ``dones`` marks terminal steps (no bootstrap); ``resets`` marks every step after
    which a new episode starts, terminal or truncated. ``cut_obs`` maps the index of
    each truncated step to its final observation; ``next_obs_last`` is the state
    after the last step when the segment stops mid-episode.
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    behaviour_log_probs: np.ndarray
    values: np.ndarray
    next_obs_last: np.ndarray | None = None
    resets: np.ndarray | None = None
    cut_obs: dict = field(default_factory=dict)
    agent_id: str = ""
    episode_id: int = 0
    policy_version: int = 0

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.dones = np.asarray(self.dones, dtype=bool)
        self.behaviour_log_probs = np.asarray(self.behaviour_log_probs, dtype=np.float64)
        if self.resets is None:
            self.resets = self.dones.copy()
        if len(self.rewards) < 1:
            raise ProtocolError("trajectory must contain at least one step")
        if not np.all(np.isfinite(self.rewards)):
            raise ProtocolError("trajectory rewards must be finite")
        if np.any(self.behaviour_log_probs > 1e-6):
            raise ProtocolError("behaviour log-probabilities must be <= 0")

    def __len__(self) -> int:
        return len(self.rewards)


# ---------------------------------------------------------------- targets

def gae(rewards, values, next_values, dones, gamma: float, lam: float, resets=None):
    """Generalized advantage estimates and value targets by backward recursion.

    ``next_values[t]`` is V(s_{t+1}); it is ignored where ``dones[t]``. The running
    sum restarts after every ``resets[t]`` (defaults to ``dones``).
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    nv = np.asarray(next_values, dtype=np.float64)
    d = np.asarray(dones, dtype=bool)
    cut = d if resets is None else np.asarray(resets, dtype=bool)
    adv = np.zeros_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        delta = r[t] + gamma * nv[t] * (1.0 - d[t]) - v[t]
        acc = delta + gamma * lam * (0.0 if cut[t] else acc)
        adv[t] = acc
    return adv, adv + v


def successor_values(values, bootstrap_value: float, resets, cut_values: dict | None = None) -> np.ndarray:
    """V(s_{t+1}) per step from a segment's own value sequence.

    Inside an episode the successor is the next step's value; at a reset it is the
    final observation's value (``cut_values[t]``, zero if absent); the last step
    uses ``bootstrap_value``.
    """
    v = np.asarray(values, dtype=np.float64)
    nv = np.append(v[1:], bootstrap_value)
    cut_values = cut_values or {}
    for t in np.flatnonzero(np.asarray(resets, dtype=bool)):
        nv[t] = cut_values.get(int(t), 0.0)
    return nv


def gae_advantages(traj: Trajectory, value_fn, gamma: float, lam: float):
    """GAE over a trajectory, evaluating ``value_fn`` on its observations."""
    values = np.asarray(value_fn(traj.obs), dtype=np.float64)
    boot = 0.0 if traj.next_obs_last is None else float(np.asarray(value_fn(traj.next_obs_last[None]))[0])
    cut_values = {t: float(np.asarray(value_fn(o[None]))[0]) for t, o in traj.cut_obs.items()}
    nv = successor_values(values, boot, traj.resets, cut_values)
    return gae(traj.rewards, values, nv, traj.dones, gamma, lam, traj.resets)


def vtrace(
    behaviour_log_probs,
    target_log_probs,
    rewards,
    values,
    next_values,
    dones,
    gamma: float,
    rho_bar: float = 1.0,
    c_bar: float = 1.0,
    resets=None,
):
    """Truncated-importance-weighted value targets and policy-gradient advantages.

    v_s - V(s) = delta_s + gamma c_s (v_{s+1} - V(s_{s+1})), computed backwards;
    pg_adv_s = rho_s (r_s + gamma v_{s+1} - V(s)).
    """
    log_ratio = np.asarray(target_log_probs, dtype=np.float64) - np.asarray(behaviour_log_probs, dtype=np.float64)
    ratio = np.exp(log_ratio)
    rho = np.minimum(rho_bar, ratio)
    c = np.minimum(c_bar, ratio)
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    nv = np.asarray(next_values, dtype=np.float64)
    disc = gamma * (1.0 - np.asarray(dones, dtype=np.float64))
    cut = np.asarray(dones if resets is None else resets, dtype=bool)
    n = len(r)
    vs_minus_v = np.zeros(n)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        delta = rho[t] * (r[t] + disc[t] * nv[t] - v[t])
        acc = delta + disc[t] * c[t] * (0.0 if cut[t] else acc)
        vs_minus_v[t] = acc
    vs = v + vs_minus_v
    # successor v-trace target: next step's vs inside an episode, the plain value at a cut
    vs_next = np.where(cut, nv, np.append(vs[1:], nv[-1]))
    pg_adv = rho * (r + disc * vs_next - v)
    return vs, pg_adv


def vtrace_targets(traj: Trajectory, target_log_probs, value_fn, gamma: float, rho_bar=1.0, c_bar=1.0):
    values = np.asarray(value_fn(traj.obs), dtype=np.float64)
    boot = 0.0 if traj.next_obs_last is None else float(np.asarray(value_fn(traj.next_obs_last[None]))[0])
    cut_values = {t: float(np.asarray(value_fn(o[None]))[0]) for t, o in traj.cut_obs.items()}
    nv = successor_values(values, boot, traj.resets, cut_values)
    return vtrace(traj.behaviour_log_probs, target_log_probs, traj.rewards, values, nv, traj.dones, gamma, rho_bar, c_bar, traj.resets)


def normalize_advantages(adv) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    if len(adv) < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / (adv.std() + 1e-8)


# ---------------------------------------------------------------- losses

def _tensor(x, dtype, like_int=False):
    if like_int:
        return torch.as_tensor(np.asarray(x), dtype=torch.long)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def _dtype(params: ParameterSet):
    return next(iter(params.arrays.values())).dtype


def policy_terms(params: ParameterSet, obs, actions):
    """Log-probs of taken actions, full log-prob table, entropies and values."""
    out = forward(params, obs)
    logp_all = categorical_log_probs(out["logits"])
    a = _tensor(actions, None, like_int=True).reshape(-1, 1)
    logp = logp_all.gather(1, a).squeeze(1)
    entropy = -(logp_all.exp() * logp_all).sum(-1)
    return logp, logp_all, entropy, out.get("value")


def ppo_surrogate(ratio: torch.Tensor, adv: torch.Tensor, clip_eps: float) -> torch.Tensor:
    """Per-sample clipped surrogate min(r A, clip(r) A)."""
    return torch.minimum(ratio * adv, torch.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


def ppo_terms(params: ParameterSet, batch: dict, cfg: AlgoConfig) -> dict:
    """Batch keys: obs, actions, old_log_probs, old_logits, advantages, returns."""
    dt = _dtype(params)
    logp, logp_all, entropy, value = policy_terms(params, batch["obs"], batch["actions"])
    ratio = torch.exp(logp - _tensor(batch["old_log_probs"], dt))
    if not torch.isfinite(ratio).all():
        raise NumericError("non-finite probability ratio in PPO loss")
    adv = _tensor(batch["advantages"], dt)
    surrogate = ppo_surrogate(ratio, adv, cfg.clip_eps).mean()
    old_logp_all = categorical_log_probs(_tensor(batch["old_logits"], dt))
    kl = (old_logp_all.exp() * (old_logp_all - logp_all)).sum(-1).mean()
    value_loss = 0.5 * ((value - _tensor(batch["returns"], dt)) ** 2).mean()
    ent = entropy.mean()
    loss = -surrogate + cfg.kl_coef * kl + cfg.value_coef * value_loss - cfg.entropy_coef * ent
    return {"loss": loss, "surrogate": surrogate, "kl": kl, "value_loss": value_loss, "entropy": ent}


def ppo_loss(params: ParameterSet, batch: dict, cfg: AlgoConfig) -> torch.Tensor:
    return ppo_terms(params, batch, cfg)["loss"]


def actor_critic_terms(params: ParameterSet, batch: dict, cfg: AlgoConfig) -> dict:
    """Batch keys: obs, actions, advantages, returns."""
    dt = _dtype(params)
    logp, _, entropy, value = policy_terms(params, batch["obs"], batch["actions"])
    pg = -(logp * _tensor(batch["advantages"], dt)).mean()
    value_loss = 0.5 * ((value - _tensor(batch["returns"], dt)) ** 2).mean()
    ent = entropy.mean()
    loss = pg + cfg.value_coef * value_loss - cfg.entropy_coef * ent
    return {"loss": loss, "policy_loss": pg, "value_loss": value_loss, "entropy": ent}


def actor_critic_loss(params: ParameterSet, batch: dict, cfg: AlgoConfig) -> torch.Tensor:
    return actor_critic_terms(params, batch, cfg)["loss"]


def impala_loss(params: ParameterSet, batch: dict, cfg: AlgoConfig) -> torch.Tensor:
    """Batch keys: obs, actions, pg_advantages, vs (V-trace targets)."""
    return actor_critic_loss(
        params, {"obs": batch["obs"], "actions": batch["actions"], "advantages": batch["pg_advantages"], "returns": batch["vs"]}, cfg
    )


def huber(x: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    ax = x.abs()
    return torch.where(ax <= delta, 0.5 * x * x, delta * (ax - 0.5 * delta))


def dqn_targets(target_params: ParameterSet, batch: dict, gamma: float) -> torch.Tensor:
    dt = _dtype(target_params)
    with torch.no_grad():
        q_next = forward(target_params, batch["next_obs"])["qvalues"].max(dim=-1).values
        done = _tensor(batch["dones"], dt)
        return _tensor(batch["rewards"], dt) + gamma * (1.0 - done) * q_next


def dqn_loss(params: ParameterSet, target_params: ParameterSet, batch: dict, cfg: AlgoConfig) -> torch.Tensor:
    """Batch keys: obs, actions, rewards, next_obs, dones."""
    y = dqn_targets(target_params, batch, cfg.gamma)
    q = forward(params, batch["obs"])["qvalues"]
    a = _tensor(batch["actions"], None, like_int=True).reshape(-1, 1)
    q_sa = q.gather(1, a).squeeze(1)
    return huber(y - q_sa, cfg.huber_delta).mean()


# ---------------------------------------------------------------- parameter store

class ParameterStore:
    """Single owner of a learner's parameters; every write bumps the version.

    Readers get an immutable snapshot (adam_step builds fresh tensors), so a read
    never observes a half-applied update.
    """

    def __init__(self, params: ParameterSet, lr: float = 0.0005, grad_clip: float = GRAD_CLIP_NORM):
        self._params = params
        self.adam = AdamState()
        self.lr = lr
        self.grad_clip = grad_clip
        self.version = 0
        self._lock = threading.Lock()

    @property
    def params(self) -> ParameterSet:
        return self._params

    def snapshot(self) -> tuple[ParameterSet, int]:
        with self._lock:
            return self._params, self.version

    def apply(self, grads: GradientSet) -> int:
        with self._lock:
            if self.grad_clip is not None:
                grads = clip_gradients(grads, self.grad_clip)
            self._params = adam_step(self._params, grads, self.adam, lr=self.lr)
            self.version += 1
            return self.version


@dataclass
class WorkerBatch:
    batch: dict
    version: int


def actor_critic_gradient(params: ParameterSet, batch: dict, cfg: AlgoConfig) -> GradientSet:
    return backward(params, lambda p: actor_critic_loss(p, batch, cfg), clip_norm=None)[1]


def a2c_update(store: ParameterStore, worker_batches: list, cfg: AlgoConfig) -> ParameterSet:
    """Synchronous coordinator step: every batch must come from the current version."""
    if not worker_batches:
        raise ProtocolError("a2c_update needs at least one worker batch")
    for wb in worker_batches:
        if wb.version != store.version:
            raise ProtocolError(
                f"worker batch collected under parameter version {wb.version}, store is at {store.version}"
            )
    params = store.params
    grads = average_gradients([actor_critic_gradient(params, wb.batch, cfg) for wb in worker_batches])
    store.apply(grads)
    return store.params


def a3c_apply(worker_gradient: GradientSet, store: ParameterStore) -> int:
    """Apply a possibly stale worker gradient immediately; returns the new version."""
    return store.apply(worker_gradient)


def impala_learn_step(store: ParameterStore, queue: deque, cfg: AlgoConfig, max_trajectories: int | None = None):
    """One learner step over queued actor trajectories; None signals an empty queue."""
    if not queue:
        return None
    trajs = []
    while queue and (max_trajectories is None or len(trajs) < max_trajectories):
        trajs.append(queue.popleft())
    params = store.params
    batches = []
    with torch.no_grad():
        for traj in trajs:
            logp, _, _, _ = policy_terms(params, traj.obs, traj.actions)
            value_fn = lambda o: forward(params, o)["value"].double().numpy()
            vs, pg_adv = vtrace_targets(traj, logp.double().numpy(), value_fn, cfg.gamma, cfg.rho_bar, cfg.c_bar)
            batches.append({"obs": traj.obs, "actions": traj.actions, "pg_advantages": pg_adv, "vs": vs})

    def loss_fn(p):
        return sum(impala_loss(p, b, cfg) for b in batches) / len(batches)

    _, grads = backward(params, loss_fn, clip_norm=None)
    store.apply(grads)
    return store.params


# ---------------------------------------------------------------- replay / DQN

class ReplayBuffer:
    """Fixed-capacity ring buffer of (obs, action, reward, next_obs, done)."""

    def __init__(self, capacity: int, seed: int = 0):
        if capacity <= 0:
            raise ConfigurationError("replay capacity must be positive")
        self.capacity = int(capacity)
        self.rng = np.random.default_rng(seed)
        self.size = 0
        self._next = 0
        self._store = None

    def _allocate(self, obs, action):
        obs = np.asarray(obs, dtype=np.float32)
        action = np.asarray(action)
        adt = np.int64 if np.issubdtype(action.dtype, np.integer) else np.float32
        cap = self.capacity
        self._store = {
            "obs": np.zeros((cap, *obs.shape), np.float32),
            "actions": np.zeros((cap, *action.shape), adt),
            "rewards": np.zeros(cap, np.float64),
            "next_obs": np.zeros((cap, *obs.shape), np.float32),
            "dones": np.zeros(cap, np.float64),
        }

    def add(self, obs, action, reward, next_obs, done) -> None:
        if self._store is None:
            self._allocate(obs, action)
        i = self._next
        s = self._store
        s["obs"][i] = obs
        s["actions"][i] = action
        s["rewards"][i] = reward
        s["next_obs"][i] = next_obs
        s["dones"][i] = float(done)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __len__(self) -> int:
        return self.size

    def sample(self, batch_size: int) -> dict:
        if self.size < batch_size:
            raise ProtocolError(f"replay holds {self.size} transitions, fewer than batch size {batch_size}")
        idx = self.rng.integers(0, self.size, size=batch_size)
        return {k: v[idx] for k, v in self._store.items()}


def epsilon_greedy(q_values, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform random action with probability epsilon, else the lowest-index argmax."""
    if not 0.0 <= epsilon <= 1.0:
        raise ProtocolError(f"epsilon must lie in [0, 1], got {epsilon}")
    q = np.asarray(q_values)
    if rng.random() < epsilon:
        return int(rng.integers(0, len(q)))
    return int(np.argmax(q))


def linear_epsilon(step: int, cfg: AlgoConfig) -> float:
    frac = min(max(step / cfg.eps_decay_steps, 0.0), 1.0)
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


@dataclass
class DQNState:
    params: ParameterSet
    target: ParameterSet
    adam: AdamState = field(default_factory=AdamState)
    updates: int = 0


def dqn_update(state: DQNState, batch: dict, cfg: AlgoConfig) -> float:
    """One optimizer step on the Huber TD loss; hard target sync every ``target_sync`` updates."""
    loss, grads = backward(state.params, lambda p: dqn_loss(p, state.target, batch, cfg), clip_norm=cfg.grad_clip)
    state.params = adam_step(state.params, grads, state.adam, lr=cfg.lr)
    state.updates += 1
    if state.updates % cfg.target_sync == 0:
        state.target = state.params.clone()
    return loss
