"""Deterministic-policy continuous-action learners: DDPG and TD3."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .discrete import AlgoConfig
from .errors import ConfigurationError, ProtocolError
from .nets import AdamState, ParameterSet, adam_step, backward, forward


@dataclass(frozen=True)
class NoiseConfig:
    sigma_explore: float = 0.1
    sigma_target: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    tau: float = 0.005

    def __post_init__(self):
        if self.sigma_explore < 0 or self.sigma_target < 0 or self.noise_clip < 0:
            raise ConfigurationError("noise scales must be non-negative")
        if self.policy_delay < 1:
            raise ConfigurationError("policy_delay must be >= 1")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigurationError("tau must lie in (0, 1]")


@dataclass
class ActorCriticBundle:
    actor: ParameterSet
    critics: list
    actor_target: ParameterSet
    critic_targets: list
    actor_adam: AdamState = field(default_factory=AdamState)
    critic_adams: list = field(default_factory=list)
    counter: int = 0
    actor_updates: int = 0
    critic_updates: int = 0

    def __post_init__(self):
        if len(self.critics) != len(self.critic_targets) or len(self.critics) not in (1, 2):
            raise ProtocolError("bundle needs one (DDPG) or two (TD3) critics with matching targets")
        if not self.critic_adams:
            self.critic_adams = [AdamState() for _ in self.critics]

    @classmethod
    def create(cls, actor: ParameterSet, critics: list) -> "ActorCriticBundle":
        return cls(actor, list(critics), actor.clone(), [c.clone() for c in critics])


def soft_update(target: ParameterSet, source: ParameterSet, tau: float) -> ParameterSet:
    """Polyak average: (1 - tau) * target + tau * source."""
    if list(target.keys()) != list(source.keys()) or any(
        target[k].shape != source[k].shape for k in target.keys()
    ):
        raise ProtocolError("soft_update needs shape-congruent parameter sets")
    return ParameterSet(
        target.spec, {k: (1.0 - tau) * target[k] + tau * source[k].to(target[k].dtype) for k in target.keys()}
    )


def _t(x, dtype):
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def _dtype(params: ParameterSet):
    return next(iter(params.arrays.values())).dtype


def q_value(critic: ParameterSet, obs, action) -> torch.Tensor:
    return forward(critic, obs, action)["critic"]


def policy_mean(actor: ParameterSet, obs) -> torch.Tensor:
    return forward(actor, obs)["mean"]


def critic_loss(critic: ParameterSet, batch: dict, y: torch.Tensor) -> torch.Tensor:
    """Mean squared error to fixed targets ``y``; batch keys obs, actions."""
    q = q_value(critic, batch["obs"], batch["actions"])
    return ((q - y.to(q.dtype)) ** 2).mean()


def actor_loss(actor: ParameterSet, critic: ParameterSet, batch: dict) -> torch.Tensor:
    """Negative critic value of the actor's own actions; only ``actor`` is differentiated."""
    return -q_value(critic, batch["obs"], policy_mean(actor, batch["obs"])).mean()


def ddpg_targets(bundle: ActorCriticBundle, batch: dict, gamma: float) -> torch.Tensor:
    dt = _dtype(bundle.critics[0])
    with torch.no_grad():
        a_next = policy_mean(bundle.actor_target, batch["next_obs"])
        q_next = q_value(bundle.critic_targets[0], batch["next_obs"], a_next)
        return _t(batch["rewards"], dt) + gamma * (1.0 - _t(batch["dones"], dt)) * q_next


def td3_targets(bundle: ActorCriticBundle, batch: dict, gamma: float, noise: NoiseConfig, rng: np.random.Generator):
    """Clipped double-Q target with clipped Gaussian target-policy smoothing."""
    dt = _dtype(bundle.critics[0])
    with torch.no_grad():
        mu = policy_mean(bundle.actor_target, batch["next_obs"])
        eta = rng.normal(0.0, 1.0, size=tuple(mu.shape)) * noise.sigma_target
        eta = np.clip(eta, -noise.noise_clip, noise.noise_clip)
        a_next = torch.clamp(mu + _t(eta, mu.dtype), -1.0, 1.0)
        qs = [q_value(c, batch["next_obs"], a_next) for c in bundle.critic_targets]
        q_min = torch.minimum(qs[0], qs[1]) if len(qs) == 2 else qs[0]
        return _t(batch["rewards"], dt) + gamma * (1.0 - _t(batch["dones"], dt)) * q_min


def _critic_steps(bundle: ActorCriticBundle, batch: dict, y: torch.Tensor, cfg: AlgoConfig) -> float:
    total = 0.0
    for i, critic in enumerate(bundle.critics):
        loss, grads = backward(critic, lambda c: critic_loss(c, batch, y), clip_norm=cfg.grad_clip)
        bundle.critics[i] = adam_step(critic, grads, bundle.critic_adams[i], lr=cfg.lr)
        total += loss
    bundle.critic_updates += 1
    return total / len(bundle.critics)


def _actor_step(bundle: ActorCriticBundle, batch: dict, cfg: AlgoConfig) -> float:
    critic = bundle.critics[0]
    loss, grads = backward(bundle.actor, lambda a: actor_loss(a, critic, batch), clip_norm=cfg.grad_clip)
    bundle.actor = adam_step(bundle.actor, grads, bundle.actor_adam, lr=cfg.lr)
    bundle.actor_updates += 1
    return loss


def _soft_update_targets(bundle: ActorCriticBundle, tau: float) -> None:
    bundle.actor_target = soft_update(bundle.actor_target, bundle.actor, tau)
    bundle.critic_targets = [soft_update(t, c, tau) for t, c in zip(bundle.critic_targets, bundle.critics)]


def ddpg_update(bundle: ActorCriticBundle, batch: dict, cfg: AlgoConfig, noise: NoiseConfig) -> dict:
    """Critic step, actor step, then soft target updates, every call."""
    y = ddpg_targets(bundle, batch, cfg.gamma)
    c_loss = _critic_steps(bundle, batch, y, cfg)
    a_loss = _actor_step(bundle, batch, cfg)
    _soft_update_targets(bundle, noise.tau)
    bundle.counter += 1
    return {"critic_loss": c_loss, "actor_loss": a_loss}


def td3_update(bundle: ActorCriticBundle, batch: dict, cfg: AlgoConfig, noise: NoiseConfig, rng: np.random.Generator) -> dict:
    """Both critics step every call; actor and targets every ``policy_delay`` calls."""
    if len(bundle.critics) != 2:
        raise ProtocolError("TD3 needs exactly two critics")
    y = td3_targets(bundle, batch, cfg.gamma, noise, rng)
    out = {"critic_loss": _critic_steps(bundle, batch, y, cfg)}
    bundle.counter += 1
    if bundle.counter % noise.policy_delay == 0:
        out["actor_loss"] = _actor_step(bundle, batch, cfg)
        _soft_update_targets(bundle, noise.tau)
    return out


def exploration_action(actor: ParameterSet, obs, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Deterministic action plus clipped Gaussian noise, clamped to [-1, 1]."""
    with torch.no_grad():
        mu = policy_mean(actor, obs).double().numpy()
    if sigma > 0:
        mu = mu + rng.normal(0.0, sigma, size=mu.shape)
    return np.clip(mu, -1.0, 1.0)
