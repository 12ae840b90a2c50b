from collections import deque

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from advdrive.discrete import (
    AlgoConfig,
    DQNState,
    ParameterStore,
    ReplayBuffer,
    Trajectory,
    WorkerBatch,
    a2c_update,
    a3c_apply,
    actor_critic_gradient,
    actor_critic_terms,
    dqn_targets,
    dqn_update,
    epsilon_greedy,
    gae,
    gae_advantages,
    impala_learn_step,
    linear_epsilon,
    normalize_advantages,
    policy_terms,
    ppo_loss,
    ppo_terms,
    successor_values,
    vtrace,
    vtrace_targets,
)
from advdrive.errors import ConfigurationError, NumericError, ProtocolError
from advdrive.nets import NetworkSpec, adam_step, clip_gradients, forward, init_network
from oracles import brute_gae, brute_vtrace

POLICY = NetworkSpec(input_shape=(3,), convs=(), hidden=(4,), heads=("logits", "value"), n_actions=3)
QNET = NetworkSpec(input_shape=(3,), convs=(), hidden=(4,), heads=("qvalues",), n_actions=3)


def _batch(rng, n=8, params=None):
    obs = rng.normal(size=(n, 3))
    actions = rng.integers(0, 3, size=n)
    b = {
        "obs": obs,
        "actions": actions,
        "advantages": normalize_advantages(rng.normal(size=n)),
        "returns": rng.normal(size=n),
    }
    if params is not None:
        with torch.no_grad():
            logits = forward(params, obs)["logits"]
            b["old_logits"] = logits.numpy()
            b["old_log_probs"] = torch.log_softmax(logits, -1).gather(1, torch.as_tensor(actions)[:, None]).squeeze(1).numpy()
    return b


def test_config_validation():
    with pytest.raises(ConfigurationError):
        AlgoConfig(gamma=0.0)
    with pytest.raises(ConfigurationError):
        AlgoConfig(clip_eps=0.0)
    with pytest.raises(ConfigurationError):
        AlgoConfig(batch_size=0)


def test_trajectory_validation():
    ok = dict(obs=np.zeros((2, 3)), actions=[0, 1], rewards=[0.0, 1.0], dones=[0, 1], behaviour_log_probs=[-1.0, -0.5], values=[0, 0])
    Trajectory(**ok)
    with pytest.raises(ProtocolError):
        Trajectory(**{**ok, "rewards": [0.0, np.inf]})
    with pytest.raises(ProtocolError):
        Trajectory(**{**ok, "behaviour_log_probs": [0.1, -0.5]})
    with pytest.raises(ProtocolError):
        Trajectory(**{**ok, "obs": np.zeros((0, 3)), "actions": [], "rewards": [], "dones": [], "behaviour_log_probs": [], "values": []})


# ---------------------------------------------------------------- GAE

def test_gae_lambda_zero_is_td_error():
    rng = np.random.default_rng(0)
    r, v, nv = rng.normal(size=(3, 6))
    d = np.array([0, 0, 1, 0, 0, 0], bool)
    adv, targets = gae(r, v, nv, d, 0.9, 0.0)
    np.testing.assert_allclose(adv, r + 0.9 * nv * (1 - d) - v)
    np.testing.assert_allclose(targets, adv + v)


def test_gae_lambda_one_zero_values_is_return_to_go():
    r = np.array([1.0, 2.0, -1.0, 0.5])
    adv, _ = gae(r, np.zeros(4), np.zeros(4), np.zeros(4, bool), 0.9, 1.0)
    want = [sum(0.9 ** (k - t) * r[k] for k in range(t, 4)) for t in range(4)]
    np.testing.assert_allclose(adv, want)


@given(st.integers(0, 10_000))
@settings(max_examples=50)
def test_gae_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    r, v = rng.normal(size=(2, 5))
    boot = rng.normal()
    nv = successor_values(v, boot, np.zeros(5, bool))
    adv, _ = gae(r, v, nv, np.zeros(5, bool), 0.97, 0.9)
    np.testing.assert_allclose(adv, brute_gae(r, v, boot, 0.97, 0.9), atol=1e-6)


def test_gae_restarts_at_episode_boundary():
    rng = np.random.default_rng(1)
    r, v = rng.normal(size=(2, 6))
    cut_value = 0.7
    resets = np.array([0, 0, 1, 0, 0, 0], bool)  # truncated after step 2, not terminal
    nv = successor_values(v, 0.3, resets, {2: cut_value})
    adv, _ = gae(r, v, nv, np.zeros(6, bool), 0.99, 0.95, resets)
    np.testing.assert_allclose(adv[:3], brute_gae(r[:3], v[:3], cut_value, 0.99, 0.95), atol=1e-12)
    np.testing.assert_allclose(adv[3:], brute_gae(r[3:], v[3:], 0.3, 0.99, 0.95), atol=1e-12)


def test_gae_advantages_uses_value_fn_and_bootstrap():
    obs = np.arange(12, dtype=float).reshape(4, 3)
    traj = Trajectory(obs, [0] * 4, [1.0, 0.0, 2.0, 1.0], [0, 0, 0, 0], [-1.0] * 4, [0] * 4, next_obs_last=np.ones(3))
    value_fn = lambda o: np.asarray(o).sum(axis=-1) * 0.1
    adv, _ = gae_advantages(traj, value_fn, 0.9, 0.8)
    np.testing.assert_allclose(adv, brute_gae(traj.rewards, value_fn(obs), 0.3, 0.9, 0.8), atol=1e-12)


# ---------------------------------------------------------------- V-trace

@given(st.integers(0, 10_000))
@settings(max_examples=50)
def test_vtrace_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    blp = -rng.uniform(0.1, 2.0, 5)
    tlp = -rng.uniform(0.1, 2.0, 5)
    r, v = rng.normal(size=(2, 5))
    boot = rng.normal()
    nv = successor_values(v, boot, np.zeros(5, bool))
    vs, _ = vtrace(blp, tlp, r, v, nv, np.zeros(5, bool), 0.95, 1.0, 1.0)
    np.testing.assert_allclose(vs, brute_vtrace(blp, tlp, r, v, boot, 0.95, 1.0, 1.0), atol=1e-6)


def test_vtrace_length_one():
    vs, pg = vtrace([-1.0], [-0.5], [2.0], [0.3], [0.4], [False], 0.9, 1.0, 1.0)
    rho = min(1.0, np.exp(0.5))
    assert vs[0] == pytest.approx(0.3 + rho * (2.0 + 0.9 * 0.4 - 0.3))
    assert pg[0] == pytest.approx(rho * (2.0 + 0.9 * 0.4 - 0.3))


def test_vtrace_on_policy_equals_lambda_one_gae():
    rng = np.random.default_rng(3)
    lp = -rng.uniform(0.1, 2, 7)
    r, v = rng.normal(size=(2, 7))
    d = np.array([0, 0, 0, 1, 0, 0, 0], bool)
    nv = successor_values(v, 0.5, d)
    vs, _ = vtrace(lp, lp, r, v, nv, d, 0.99)
    _, targets = gae(r, v, nv, d, 0.99, 1.0)
    np.testing.assert_allclose(vs, targets, atol=1e-12)


def test_vtrace_pg_advantage_uses_next_target():
    rng = np.random.default_rng(4)
    blp, tlp = -rng.uniform(0.1, 2, (2, 5))
    r, v = rng.normal(size=(2, 5))
    nv = successor_values(v, 0.2, np.zeros(5, bool))
    vs, pg = vtrace(blp, tlp, r, v, nv, np.zeros(5, bool), 0.9)
    rho = np.minimum(1.0, np.exp(tlp - blp))
    vs_next = np.append(vs[1:], 0.2)
    np.testing.assert_allclose(pg, rho * (r + 0.9 * vs_next - v), atol=1e-12)


def test_vtrace_targets_wrapper():
    obs = np.eye(3)
    traj = Trajectory(obs, [0, 1, 2], [1.0, 0.0, 1.0], [0, 0, 1], [-1.0, -1.1, -0.9], [0, 0, 0])
    value_fn = lambda o: np.asarray(o) @ np.array([0.1, 0.2, 0.3])
    tlp = np.array([-0.8, -1.3, -0.9])
    vs, _ = vtrace_targets(traj, tlp, value_fn, 0.9)
    np.testing.assert_allclose(vs, brute_vtrace(traj.behaviour_log_probs, tlp, traj.rewards, value_fn(obs), 0.0, 0.9, 1, 1), atol=1e-12)


# ---------------------------------------------------------------- PPO

def _loop_ppo_loss(params, batch, cfg):
    """Per-sample loop over softmax probabilities; no shared code with ppo_terms."""
    out = forward(params, batch["obs"])
    logits = out["logits"].detach().double().numpy()
    values = out["value"].detach().double().numpy()
    n = len(batch["actions"])
    surr = kl = vloss = ent = 0.0
    for i in range(n):
        z = logits[i] - logits[i].max()
        p = np.exp(z) / np.exp(z).sum()
        zo = batch["old_logits"][i] - batch["old_logits"][i].max()
        po = np.exp(zo) / np.exp(zo).sum()
        a = batch["actions"][i]
        ratio = p[a] / np.exp(batch["old_log_probs"][i])
        A = batch["advantages"][i]
        clipped = min(max(ratio, 1 - cfg.clip_eps), 1 + cfg.clip_eps)
        surr += min(ratio * A, clipped * A)
        kl += sum(po[j] * (np.log(po[j]) - np.log(p[j])) for j in range(len(p)))
        vloss += 0.5 * (values[i] - batch["returns"][i]) ** 2
        ent += -sum(p[j] * np.log(p[j]) for j in range(len(p)))
    return -surr / n + cfg.kl_coef * kl / n + cfg.value_coef * vloss / n - cfg.entropy_coef * ent / n


def test_ppo_loss_matches_loop_oracle():
    rng = np.random.default_rng(0)
    old = init_network(POLICY, 0).cast(torch.float64)
    new = init_network(POLICY, 1).cast(torch.float64)
    batch = _batch(rng, 16, old)
    cfg = AlgoConfig()
    assert float(ppo_loss(new, batch, cfg)) == pytest.approx(_loop_ppo_loss(new, batch, cfg), abs=1e-5)


def test_ppo_identity_policy():
    rng = np.random.default_rng(1)
    p = init_network(POLICY, 0).cast(torch.float64)
    terms = ppo_terms(p, _batch(rng, 32, p), AlgoConfig())
    assert float(terms["surrogate"]) == pytest.approx(0.0, abs=1e-12)
    assert float(terms["kl"]) == pytest.approx(0.0, abs=1e-12)


def test_ppo_non_finite_ratio():
    rng = np.random.default_rng(2)
    p = init_network(POLICY, 0).cast(torch.float64)
    b = _batch(rng, 4, p)
    b["old_log_probs"] = np.full(4, -1e6)
    with pytest.raises(NumericError):
        ppo_loss(p, b, AlgoConfig())


# ---------------------------------------------------------------- A2C / A3C

def test_a2c_single_worker_equals_plain_step():
    rng = np.random.default_rng(0)
    p = init_network(POLICY, 0)
    batch = _batch(rng)
    cfg = AlgoConfig()
    store = ParameterStore(p, lr=cfg.lr, grad_clip=cfg.grad_clip)
    got = a2c_update(store, [WorkerBatch(batch, 0)], cfg)
    from advdrive.nets import AdamState
    want = adam_step(p, clip_gradients(actor_critic_gradient(p, batch, cfg), cfg.grad_clip), AdamState(), lr=cfg.lr)
    assert got.equal(want) and store.version == 1


def test_a2c_identical_workers_average():
    rng = np.random.default_rng(1)
    p = init_network(POLICY, 0)
    batch = _batch(rng)
    cfg = AlgoConfig()
    one = a2c_update(ParameterStore(p), [WorkerBatch(batch, 0)], cfg)
    three = a2c_update(ParameterStore(p), [WorkerBatch(batch, 0)] * 3, cfg)
    for k in one.keys():
        torch.testing.assert_close(one[k], three[k], atol=1e-6, rtol=0)


def test_a2c_rejects_stale_batch_but_a3c_accepts():
    rng = np.random.default_rng(2)
    cfg = AlgoConfig()
    store = ParameterStore(init_network(POLICY, 0))
    batch = _batch(rng)
    stale_params, v0 = store.snapshot()
    for _ in range(3):
        a2c_update(store, [WorkerBatch(batch, store.version)], cfg)
    with pytest.raises(ProtocolError, match="version 0"):
        a2c_update(store, [WorkerBatch(batch, v0)], cfg)
    assert a3c_apply(actor_critic_gradient(stale_params, batch, cfg), store) == 4


def test_a3c_interleaved_version_count():
    rng = np.random.default_rng(3)
    cfg = AlgoConfig()
    store = ParameterStore(init_network(POLICY, 0))
    for i in range(6):
        params, _ = store.snapshot()
        a3c_apply(actor_critic_gradient(params, _batch(rng), cfg), store)
    assert store.version == 6


def test_a3c_single_worker_equals_serial_actor_critic():
    rng = np.random.default_rng(4)
    cfg = AlgoConfig()
    batches = [_batch(rng) for _ in range(3)]
    store = ParameterStore(init_network(POLICY, 0))
    serial = ParameterStore(init_network(POLICY, 0))
    for b in batches:
        a3c_apply(actor_critic_gradient(store.params, b, cfg), store)
        a2c_update(serial, [WorkerBatch(b, serial.version)], cfg)
    assert store.params.equal(serial.params)


def test_store_snapshot_is_immutable():
    rng = np.random.default_rng(5)
    store = ParameterStore(init_network(POLICY, 0))
    before, _ = store.snapshot()
    copy = before.clone()
    a3c_apply(actor_critic_gradient(before, _batch(rng), AlgoConfig()), store)
    assert before.equal(copy) and not store.params.equal(copy)


# ---------------------------------------------------------------- IMPALA

def _traj(rng, params, n=6):
    obs = rng.normal(size=(n, 3))
    with torch.no_grad():
        logits = forward(params, obs)["logits"]
        probs = torch.softmax(logits, -1).numpy()
    actions = np.array([rng.choice(3, p=p / p.sum()) for p in probs])
    logp = np.log(probs[np.arange(n), actions])
    return Trajectory(obs, actions, rng.normal(size=n), np.zeros(n, bool), logp, np.zeros(n), next_obs_last=rng.normal(size=3))


def test_impala_empty_queue_signals_retry():
    assert impala_learn_step(ParameterStore(init_network(POLICY, 0)), deque(), AlgoConfig()) is None


def test_impala_fresh_actor_equals_on_policy_step():
    rng = np.random.default_rng(0)
    cfg = AlgoConfig()
    p = init_network(POLICY, 0).cast(torch.float64)
    traj = _traj(rng, p)
    got = impala_learn_step(ParameterStore(p), deque([traj]), cfg)
    value_fn = lambda o: forward(p, o)["value"].detach().numpy()
    adv, targets = gae_advantages(traj, value_fn, cfg.gamma, 1.0)
    nv = successor_values(value_fn(traj.obs), float(value_fn(traj.next_obs_last[None])[0]), traj.resets)
    vs_next = np.append(targets[1:], nv[-1])
    pg_adv = traj.rewards + cfg.gamma * vs_next - value_fn(traj.obs)
    batch = {"obs": traj.obs, "actions": traj.actions, "advantages": pg_adv, "returns": targets}
    want = a2c_update(ParameterStore(p), [WorkerBatch(batch, 0)], cfg)
    for k in got.keys():
        torch.testing.assert_close(got[k], want[k], atol=1e-9, rtol=0)


def test_impala_duplicate_trajectories_average():
    rng = np.random.default_rng(1)
    p = init_network(POLICY, 0).cast(torch.float64)
    traj = _traj(rng, init_network(POLICY, 7).cast(torch.float64))
    one = impala_learn_step(ParameterStore(p), deque([traj]), AlgoConfig())
    two = impala_learn_step(ParameterStore(p), deque([traj, traj]), AlgoConfig())
    for k in one.keys():
        torch.testing.assert_close(one[k], two[k], atol=1e-9, rtol=0)


def test_impala_learns_values_of_frozen_behaviour():
    rng = np.random.default_rng(2)
    cfg = AlgoConfig(lr=0.01, entropy_coef=0.0)
    behaviour = init_network(POLICY, 3).cast(torch.float64)
    data = [_traj(rng, behaviour) for _ in range(4)]
    store = ParameterStore(behaviour)

    def value_loss():
        p = store.params
        total = 0.0
        for t in data:
            logp, _, _, _ = policy_terms(p, t.obs, t.actions)
            vs, _ = vtrace_targets(t, logp.detach().numpy(), lambda o: forward(p, o)["value"].detach().numpy(), cfg.gamma)
            total += float(actor_critic_terms(p, {"obs": t.obs, "actions": t.actions, "advantages": np.zeros(len(t)), "returns": vs}, cfg)["value_loss"])
        return total

    start = value_loss()
    for _ in range(150):
        impala_learn_step(store, deque(data), cfg)
    assert value_loss() < 0.75 * start


# ---------------------------------------------------------------- DQN

def test_dqn_targets_terminal_and_myopic():
    rng = np.random.default_rng(0)
    target = init_network(QNET, 0)
    b = {"obs": rng.normal(size=(5, 3)), "actions": rng.integers(0, 3, 5), "rewards": rng.normal(size=5),
         "next_obs": rng.normal(size=(5, 3)), "dones": np.ones(5)}
    np.testing.assert_allclose(dqn_targets(target, b, 0.99).numpy(), b["rewards"], rtol=1e-6)
    b["dones"] = np.zeros(5)
    np.testing.assert_allclose(dqn_targets(target, b, 0.0).numpy(), b["rewards"], rtol=1e-6)


def test_dqn_target_sync_points():
    rng = np.random.default_rng(1)
    cfg = AlgoConfig(target_sync=3)
    p = init_network(QNET, 0)
    state = DQNState(p, p.clone())
    frozen = state.target.clone()
    for i in range(1, 7):
        b = {"obs": rng.normal(size=(8, 3)), "actions": rng.integers(0, 3, 8), "rewards": rng.normal(size=8),
             "next_obs": rng.normal(size=(8, 3)), "dones": np.zeros(8)}
        dqn_update(state, b, cfg)
        if i % 3:
            assert state.target.equal(frozen) and not state.params.equal(frozen)
        else:
            assert state.target.equal(state.params)
            frozen = state.target.clone()


def test_replay_buffer_ring_and_sampling():
    buf = ReplayBuffer(4, seed=0)
    with pytest.raises(ProtocolError):
        buf.sample(1)
    for i in range(6):
        buf.add(np.full(2, i), i % 3, float(i), np.full(2, i + 1), i == 5)
    assert len(buf) == 4
    draws = [buf.sample(4) for _ in range(8)]
    s = {k: np.concatenate([d[k] for d in draws]) for k in ("rewards", "obs", "next_obs")}
    assert set(s["rewards"]) <= {2.0, 3.0, 4.0, 5.0}
    np.testing.assert_array_equal(s["next_obs"][:, 0], s["obs"][:, 0] + 1)
    with pytest.raises(ProtocolError):
        buf.sample(5)
    a = ReplayBuffer(10, seed=3)
    b = ReplayBuffer(10, seed=3)
    for buf in (a, b):
        for i in range(10):
            buf.add(np.zeros(1), i, float(i), np.zeros(1), False)
    np.testing.assert_array_equal(a.sample(5)["rewards"], b.sample(5)["rewards"])


def test_epsilon_greedy_rules():
    rng = np.random.default_rng(0)
    assert epsilon_greedy([0] * 8 + [1], 0.0, rng) == 8
    assert epsilon_greedy([0] * 9, 0.0, rng) == 0
    with pytest.raises(ProtocolError):
        epsilon_greedy([0] * 9, 1.5, rng)


def test_epsilon_one_is_uniform():
    rng = np.random.default_rng(0)
    counts = np.bincount([epsilon_greedy(np.arange(9), 1.0, rng) for _ in range(100_000)], minlength=9)
    np.testing.assert_allclose(counts / 100_000, 1 / 9, atol=0.01)


def test_linear_epsilon_schedule():
    cfg = AlgoConfig(eps_decay_steps=100)
    assert linear_epsilon(0, cfg) == 1.0
    assert linear_epsilon(50, cfg) == pytest.approx(0.525)
    assert linear_epsilon(10_000, cfg) == pytest.approx(0.05)
