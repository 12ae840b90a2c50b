import numpy as np
import pytest

from advdrive.agents import make_learner, network_specs
from advdrive.config import DESK_PRESET, KEYS, Config, parse_config_text
from advdrive.errors import CheckpointError, ConfigurationError, ProtocolError
from advdrive.harness import (
    PolicyRegistry,
    ScenarioSpec,
    _assert_frozen,
    algo_config,
    net_config,
    noise_config,
    read_records,
    run_scenario1_training,
    run_scenario3_adv_training,
    run_testing,
    scenario_spec,
    train_config,
)
from advdrive.metrics import parse_episode_log
from advdrive.nets import NetworkSpec

TINY = [
    "scenario.map=straight",
    "scenario.scripted=0",
    "train.n_drl=1",
    "train.rollout_steps=32",
    "train.eval_episodes=0",
]


def _cfg(*extra):
    return Config.load(overrides=[*TINY, *extra], desk_scale=True)


# ---------------------------------------------------------------- config

def test_config_defaults_and_overrides():
    cfg = Config.load(overrides=["algo.gamma=0.9"])
    assert cfg["algo.gamma"] == 0.9 and cfg["train.iterations"] == 200
    with pytest.raises(ConfigurationError, match="algo.gama"):
        Config.load(overrides=["algo.gama=0.9"])
    with pytest.raises(ConfigurationError):
        Config.load(overrides=["algo.gamma"])


def test_config_file_and_dump_round_trip(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# comment\nnet.convs = 8x4x2, 16x3x1\nnet.hidden = 32,32\n\nseeds.list = 3,4\n")
    cfg = Config.load(p)
    assert cfg["net.convs"] == ((8, 4, 2), (16, 3, 1)) and cfg["seeds.list"] == (3, 4)
    again = parse_config_text(cfg.dump())
    assert all(again[k.name] == cfg[k.name] for k in KEYS)


def test_desk_preset_yields_to_explicit_values():
    cfg = Config.load(overrides=["train.iterations=7"], desk_scale=True)
    assert cfg["train.iterations"] == 7
    assert cfg["train.rollout_steps"] == DESK_PRESET["train.rollout_steps"]
    assert Config.load(overrides=["desk_scale.enable=true"])["net.obs_pool"] == DESK_PRESET["net.obs_pool"]


def test_adversary_budget_below_ac_budget():
    for cfg in (Config(), Config.load(desk_scale=True)):
        assert cfg["train.adv_iterations"] < cfg["train.iterations"]
        assert cfg["train.adv_total_steps"] < cfg["train.total_steps"]


def test_config_value_validation():
    with pytest.raises(ConfigurationError):
        train_config(_cfg("train.optimizer=sgd"))
    with pytest.raises(ConfigurationError):
        train_config(_cfg("train.n_drl=0"))
    with pytest.raises(ConfigurationError):
        scenario_spec(_cfg("scenario.kind=4"))


# ---------------------------------------------------------------- registry

def test_registry_has_fourteen_names(tmp_path):
    reg = PolicyRegistry(tmp_path)
    names = reg.names()
    assert len(names) == len(set(names)) == 14
    assert {reg.entry(n).kind for n in names} == {"discrete", "continuous"}
    with pytest.raises(ConfigurationError):
        reg.entry("AC-SARSA")


def test_registry_guards(tmp_path):
    reg = PolicyRegistry(tmp_path)
    cfg = _cfg("train.iterations=0")
    with pytest.raises(CheckpointError):
        reg.load("AC-PPO")
    run_scenario1_training(cfg, reg, tmp_path, "PPO")
    spec = network_specs("PPO", net_config(cfg))["policy"]
    assert reg.load("AC-PPO", spec).spec == spec
    wrong = NetworkSpec(input_shape=spec.input_shape, convs=(), hidden=(8,), heads=spec.heads)
    with pytest.raises(CheckpointError):
        reg.load("AC-PPO", wrong)
    reg.entry("AC-A2C").path.write_bytes(reg.entry("AC-PPO").path.read_bytes())
    with pytest.raises(CheckpointError, match="PPO"):
        reg.load("AC-A2C")


# ---------------------------------------------------------------- training

@pytest.mark.parametrize("algo", ["PPO", "DQN", "TD3"])
def test_zero_iterations_saves_initial_policy(tmp_path, algo):
    cfg = _cfg("train.iterations=0", "train.seed=3")
    res = run_scenario1_training(cfg, PolicyRegistry(tmp_path), tmp_path, algo)
    fresh = make_learner(algo, net_config(cfg), algo_config(cfg), noise_config(cfg), seed=3000)
    assert PolicyRegistry(tmp_path).load(f"AC-{algo}").equal(fresh.policy_params())
    assert res.records == []


@pytest.mark.parametrize("algo", ["A3C", "DDPG"])
def test_training_is_deterministic(tmp_path, algo):
    cfg = _cfg("train.iterations=2", "train.eval_episodes=1", "algo.learning_starts=16", "train.batch_size=8")
    digests, records = [], []
    for run in ("a", "b"):
        reg = PolicyRegistry(tmp_path / run)
        res = run_scenario1_training(cfg, reg, tmp_path / run, algo)
        digests.append(reg.file_digest(f"AC-{algo}"))
        records.append(res.record_path.read_bytes())
    assert digests[0] == digests[1] and records[0] == records[1]
    rows = read_records(res.record_path)
    assert [r.iteration for r in rows] == [0, 1, 2]
    assert rows[-1].env_steps == 64 and rows[-1].updates > 0


def test_step_budget_stops_training(tmp_path):
    res = run_scenario1_training(_cfg("train.iterations=5", "train.total_steps=40"), PolicyRegistry(tmp_path), tmp_path, "PPO")
    assert [r.iteration for r in res.records] == [1, 2]
    assert res.records[-1].env_steps == 40


def test_adversary_training_leaves_victim_untouched(tmp_path):
    reg = PolicyRegistry(tmp_path)
    run_scenario1_training(_cfg("train.iterations=0"), reg, tmp_path, "A3C")
    before = reg.entry("AC-A3C").path.read_bytes()
    cfg = _cfg("adversary.victim=AC-A3C", "adversary.slot=1", "train.adv_iterations=1")
    res = run_scenario3_adv_training(cfg, reg, tmp_path, "PPO")
    assert reg.entry("AC-A3C").path.read_bytes() == before
    assert res.extra["victim_before"] == res.extra["victim_after"]
    assert reg.entry("ADV-PPO").path.exists()
    with pytest.raises(ProtocolError):
        _assert_frozen(("a", "b"), ("a", "c"), "AC-A3C")


# ---------------------------------------------------------------- testing

def test_scenario2_runs_alone(tmp_path):
    cfg = _cfg("scenario.kind=2", "scenario.policies=brake,scripted-follower", "scenario.steps=30", "seeds.list=0,1,2")
    res = run_testing(cfg, PolicyRegistry(tmp_path), tmp_path)
    assert len(res.logs) == 6 and set(res.groups) == {"brake", "scripted-follower"}
    for path in res.logs:
        log = parse_episode_log(path)
        assert set(log.rows) == {"P0"}
        assert not any(cv for *_, cv, _, _ in log.rows["P0"])
    with pytest.raises(ConfigurationError):
        ScenarioSpec(kind=2, map_id="straight", roster=("brake",), n_scripted=1, seeds=(0,), episodes=1)


def test_scenario3_needs_frozen_victim():
    with pytest.raises(ConfigurationError):
        ScenarioSpec(kind=3, map_id="env_1", roster=("a",), seeds=(0,), episodes=1, adversary="ADV-PPO")


def test_testing_is_byte_identical(tmp_path):
    cfg = _cfg("scenario.kind=1", "scenario.policies=scripted-follower,brake", "scenario.scripted=1", "scenario.steps=25", "seeds.list=4,5")
    a = run_testing(cfg, PolicyRegistry(tmp_path), tmp_path / "a")
    b = run_testing(cfg, PolicyRegistry(tmp_path), tmp_path / "b")
    assert [p.read_bytes() for p in a.logs] == [p.read_bytes() for p in b.logs]
    rows = parse_episode_log(a.logs[0]).rows
    assert set(rows) == {"P0", "P1", "S0"}
    assert all(len(r) <= 25 for r in rows.values()) and len(rows["P1"]) == 25  # braking never ends early
    assert np.all([t for t, *_ in rows["P1"]] == np.arange(1, len(rows["P1"]) + 1))
