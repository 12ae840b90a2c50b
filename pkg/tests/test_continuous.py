import numpy as np
import pytest
import torch

from advdrive.continuous import (
    ActorCriticBundle,
    NoiseConfig,
    ddpg_targets,
    ddpg_update,
    exploration_action,
    policy_mean,
    q_value,
    soft_update,
    td3_targets,
    td3_update,
)
from advdrive.discrete import AlgoConfig, ReplayBuffer
from advdrive.errors import ConfigurationError, ProtocolError
from advdrive.nets import NetworkSpec, ParameterSet, init_network

ACTOR = NetworkSpec(input_shape=(3,), convs=(), hidden=(4,), heads=("mean",), action_dim=2)
CRITIC = NetworkSpec(input_shape=(3,), convs=(), hidden=(4,), heads=("critic",), action_dim=2)


def _batch(rng, n=16, done=0.0):
    return {
        "obs": rng.normal(size=(n, 3)),
        "actions": rng.uniform(-1, 1, size=(n, 2)),
        "rewards": rng.normal(size=n),
        "next_obs": rng.normal(size=(n, 3)),
        "dones": np.full(n, done),
    }


def _bundle(n_critics=2, twins=False, seed=0):
    actor = init_network(ACTOR, seed)
    critics = [init_network(CRITIC, seed + 1 + (0 if twins else i)) for i in range(n_critics)]
    return ActorCriticBundle.create(actor, critics)


def test_noise_config_validation():
    with pytest.raises(ConfigurationError):
        NoiseConfig(sigma_target=-1)
    with pytest.raises(ConfigurationError):
        NoiseConfig(policy_delay=0)
    with pytest.raises(ConfigurationError):
        NoiseConfig(tau=0.0)


def test_bundle_needs_matching_targets():
    b = _bundle()
    with pytest.raises(ProtocolError):
        ActorCriticBundle(b.actor, b.critics, b.actor_target, b.critic_targets[:1])
    with pytest.raises(ProtocolError):
        td3_update(_bundle(1), _batch(np.random.default_rng(0)), AlgoConfig(), NoiseConfig(), np.random.default_rng(0))


# ---------------------------------------------------------------- soft update

def test_soft_update_fixed_points():
    a, b = init_network(CRITIC, 0), init_network(CRITIC, 1)
    assert soft_update(a, b, 0.0).equal(a)
    assert soft_update(a, b, 1.0).equal(b)


def test_soft_update_geometric_recurrence():
    spec = NetworkSpec(input_shape=(1,), convs=(), hidden=(), heads=("value",))
    target = ParameterSet(spec, {"head.value.w": torch.zeros(1, 1, dtype=torch.float64), "head.value.b": torch.zeros(1, dtype=torch.float64)})
    source = ParameterSet(spec, {"head.value.w": torch.ones(1, 1, dtype=torch.float64), "head.value.b": torch.ones(1, dtype=torch.float64)})
    for _ in range(200):
        target = soft_update(target, source, 0.005)
    assert float(target["head.value.w"]) == pytest.approx(1 - 0.995**200, abs=1e-12)
    assert 1 - 0.995**200 == pytest.approx(0.633, abs=1e-3)


def test_soft_update_contracts_distance():
    a, b = init_network(CRITIC, 0).cast(torch.float64), init_network(CRITIC, 1).cast(torch.float64)
    c = soft_update(a, b, 0.3)
    d0 = np.linalg.norm(a.flat() - b.flat())
    d1 = np.linalg.norm(c.flat() - b.flat())
    assert d1 == pytest.approx(0.7 * d0, rel=1e-12)


def test_soft_update_shape_mismatch():
    with pytest.raises(ProtocolError):
        soft_update(init_network(CRITIC, 0), init_network(ACTOR, 0), 0.5)


# ---------------------------------------------------------------- targets

def test_ddpg_terminal_target_is_reward():
    rng = np.random.default_rng(0)
    b = _batch(rng, done=1.0)
    np.testing.assert_allclose(ddpg_targets(_bundle(1), b, 0.99).numpy(), b["rewards"], rtol=1e-6)


def test_td3_target_is_min_of_critics():
    rng = np.random.default_rng(1)
    bundle = _bundle()
    b = _batch(rng)
    noise = NoiseConfig(sigma_target=0.0)
    y = td3_targets(bundle, b, 0.9, noise, np.random.default_rng(0))
    a_next = policy_mean(bundle.actor_target, b["next_obs"])
    with torch.no_grad():
        q1 = q_value(bundle.critic_targets[0], b["next_obs"], a_next)
        q2 = q_value(bundle.critic_targets[1], b["next_obs"], a_next)
    r = torch.as_tensor(b["rewards"], dtype=q1.dtype)
    assert torch.equal(y, r + 0.9 * torch.minimum(q1, q2))
    assert bool((y <= r + 0.9 * q1).all() and (y <= r + 0.9 * q2).all())


def test_td3_target_noise_is_clipped():
    rng = np.random.default_rng(2)
    bundle = _bundle()
    b = _batch(rng, n=256)
    # huge sigma with zero clip must equal the noiseless target
    y0 = td3_targets(bundle, b, 0.9, NoiseConfig(sigma_target=0.0), np.random.default_rng(0))
    y1 = td3_targets(bundle, b, 0.9, NoiseConfig(sigma_target=50.0, noise_clip=0.0), np.random.default_rng(0))
    assert torch.equal(y0, y1)


def test_td3_degenerates_to_ddpg():
    rng = np.random.default_rng(3)
    b = _batch(rng)
    twins = _bundle(2, twins=True)
    single = ActorCriticBundle.create(twins.actor, twins.critics[:1])
    y3 = td3_targets(twins, b, 0.99, NoiseConfig(sigma_target=0.0, policy_delay=1), np.random.default_rng(0))
    yd = ddpg_targets(single, b, 0.99)
    torch.testing.assert_close(y3, yd, atol=1e-6, rtol=0)


# ---------------------------------------------------------------- updates

def test_td3_update_counting():
    rng = np.random.default_rng(4)
    bundle = _bundle()
    cfg, noise = AlgoConfig(), NoiseConfig(policy_delay=2)
    actor0 = bundle.actor.clone()
    out = td3_update(bundle, _batch(rng), cfg, noise, rng)
    assert "actor_loss" not in out and bundle.actor.equal(actor0)
    for _ in range(9):
        td3_update(bundle, _batch(rng), cfg, noise, rng)
    assert bundle.critic_updates == 10 and bundle.actor_updates == 5
    assert bundle.actor_updates == bundle.critic_updates // noise.policy_delay


def test_td3_targets_move_only_on_actor_steps():
    rng = np.random.default_rng(5)
    bundle = _bundle()
    cfg, noise = AlgoConfig(), NoiseConfig(policy_delay=2)
    t0 = bundle.critic_targets[0].clone()
    td3_update(bundle, _batch(rng), cfg, noise, rng)
    assert bundle.critic_targets[0].equal(t0)
    td3_update(bundle, _batch(rng), cfg, noise, rng)
    assert not bundle.critic_targets[0].equal(t0)


def test_ddpg_tau_one_copies_sources():
    rng = np.random.default_rng(6)
    bundle = _bundle(1)
    ddpg_update(bundle, _batch(rng), AlgoConfig(), NoiseConfig(tau=1.0))
    assert bundle.actor_target.equal(bundle.actor)
    assert bundle.critic_targets[0].equal(bundle.critics[0])


def test_ddpg_solves_quadratic_bandit():
    actor_spec = NetworkSpec(input_shape=(1,), convs=(), hidden=(8,), heads=("mean",), action_dim=1)
    # smooth activation so the critic can represent the quadratic in the action
    critic_spec = NetworkSpec(input_shape=(1,), convs=(), hidden=(16,), heads=("critic",), action_dim=1, activation="tanh")
    bundle = ActorCriticBundle.create(init_network(actor_spec, 0), [init_network(critic_spec, 1)])
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(5000, seed=0)
    for _ in range(2000):
        s = rng.uniform(-1, 1, 1)
        a = rng.uniform(-1, 1, 1)
        buf.add(s, a, -float((a[0] - 0.5) ** 2), s, True)
    cfg = AlgoConfig(lr=0.003, batch_size=64)
    noise = NoiseConfig(tau=0.05)
    for _ in range(2000):
        ddpg_update(bundle, buf.sample(64), cfg, noise)
    mu = policy_mean(bundle.actor, np.linspace(-1, 1, 11)[:, None]).detach().numpy()
    assert np.all((mu >= 0.35) & (mu <= 0.65)), mu.ravel()


# ---------------------------------------------------------------- exploration

def test_exploration_zero_sigma_is_deterministic():
    actor = init_network(ACTOR, 0)
    obs = np.ones(3)
    a = exploration_action(actor, obs, 0.0, np.random.default_rng(0))
    np.testing.assert_allclose(a, policy_mean(actor, obs).detach().numpy(), rtol=1e-6)


def test_exploration_clamps_at_saturated_mean():
    actor = init_network(ACTOR, 0)
    big = ParameterSet(ACTOR, {k: v.clone() for k, v in actor.items()})
    big.arrays["head.mean.b"] = torch.full((2,), 50.0)  # tanh saturates at 1
    rng = np.random.default_rng(0)
    for _ in range(100):
        assert (exploration_action(big, np.zeros(3), 0.5, rng) <= 1.0).all()


def test_exploration_noise_std():
    actor = init_network(ACTOR, 0)
    obs = np.zeros(3)
    mu = policy_mean(actor, obs).detach().numpy()
    assert np.all(np.abs(mu) < 0.5)  # interior, so clamping is negligible at sigma 0.1
    rng = np.random.default_rng(0)
    draws = exploration_action(actor, np.zeros((100_000, 3)), 0.1, rng)
    std = draws.std(axis=0)
    assert np.all((std >= 0.08) & (std <= 0.12))
