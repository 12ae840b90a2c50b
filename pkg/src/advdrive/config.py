"""Flat ``key = value`` run configuration with one table of keys, types and defaults.

The same table drives config-file parsing, ``--set`` overrides, ``--help`` text and
the desk-scale preset, so documentation and behavior cannot drift apart.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple:
    """Comma list of ints; ``a-b`` expands to the inclusive range."""
    out = []
    for part in _parse_str_list(text):
        m = re.fullmatch(r"(\d+)-(\d+)", part)
        if m:
            out.extend(range(int(m[1]), int(m[2]) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _parse_str_list(text: str) -> tuple:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _parse_convs(text: str) -> tuple:
    """``16x8x4,32x4x2`` -> ((filters, kernel, stride), ...); empty for no conv layers."""
    layers = []
    for part in _parse_str_list(text):
        f, k, s = (int(v) for v in part.lower().split("x"))
        layers.append((f, k, s))
    return tuple(layers)


def _parse_float_list(text: str) -> tuple:
    return tuple(float(p) for p in _parse_str_list(text))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join("x".join(str(v) for v in layer) for layer in value)
        return ",".join(str(v) for v in value)
    return str(value)


_PARSERS = {
    "int": int,
    "float": float,
    "str": str,
    "bool": _parse_bool,
    "ints": _parse_int_list,
    "strs": _parse_str_list,
    "floats": _parse_float_list,
    "convs": _parse_convs,
}


@dataclass(frozen=True)
class Key:
    name: str
    kind: str
    default: object
    help: str


KEYS = (
    Key("scenario.kind", "int", 1, "1 multi-agent, 2 single-agent, 3 adversarial"),
    Key("scenario.map", "str", "env_1", "map id: env_1, env_2 or straight"),
    Key("scenario.policies", "strs", ("AC-PPO", "AC-A2C", "AC-A3C", "AC-IMPALA", "AC-DQN", "AC-DDPG", "AC-TD3"),
        "policies driven during testing (registry names, brake, scripted-follower)"),
    Key("scenario.scripted", "int", 2, "scripted traffic cars per world"),
    Key("scenario.episodes", "int", 50, "testing episodes"),
    Key("scenario.steps", "int", 0, "steps per testing episode; 0 uses the map default (env_1 2000, env_2 5000)"),
    Key("scenario.slot", "int", 0, "spawn slot of the single agent in scenario 2"),
    Key("train.iterations", "int", 200, "AC training iterations"),
    Key("train.adv_iterations", "int", 100, "adversary training iterations"),
    Key("train.rollout_steps", "int", 2048, "environment ticks per iteration"),
    Key("train.total_steps", "int", 40_000_000, "AC step budget (learner transitions)"),
    Key("train.adv_total_steps", "int", 20_000_000, "adversary step budget"),
    Key("train.lr", "float", 0.0005, "learning rate"),
    Key("train.batch_size", "int", 128, "minibatch size"),
    Key("train.optimizer", "str", "adam", "optimizer tag (only adam)"),
    Key("train.n_drl", "int", 2, "independent learners per training world"),
    Key("train.n_workers", "int", 1, "parallel worlds (worker contexts) per learner"),
    Key("train.max_steps", "int", 2000, "episode step limit during training"),
    Key("train.eval_episodes", "int", 0, "greedy evaluation episodes after each iteration (0 disables)"),
    Key("train.eval_every", "int", 1, "evaluate every k-th iteration; the final iteration is always evaluated"),
    Key("train.slots", "ints", (), "spawn slots of the learners; empty uses 0, 1, ..."),
    Key("train.seed", "int", 0, "training session seed"),
    Key("algo.tag", "str", "PPO", "PPO, A2C, A3C, IMPALA, DQN, DDPG or TD3"),
    Key("algo.gamma", "float", 0.99, "discount"),
    Key("algo.gae_lambda", "float", 0.95, "advantage-estimation lambda"),
    Key("algo.clip_eps", "float", 0.2, "PPO ratio clip"),
    Key("algo.kl_coef", "float", 0.2, "PPO KL(old||new) coefficient"),
    Key("algo.value_coef", "float", 0.5, "value-loss weight"),
    Key("algo.entropy_coef", "float", 0.01, "entropy-bonus weight"),
    Key("algo.ppo_epochs", "int", 4, "PPO passes over each rollout"),
    Key("algo.segment_steps", "int", 16, "worker segment length for A2C, A3C, IMPALA"),
    Key("algo.grad_clip", "float", 40.0, "global gradient-norm clip"),
    Key("algo.eps_start", "float", 1.0, "DQN initial exploration rate"),
    Key("algo.eps_end", "float", 0.05, "DQN final exploration rate"),
    Key("algo.eps_decay_steps", "int", 100_000, "DQN exploration decay length"),
    Key("algo.target_sync", "int", 1000, "DQN target-network sync interval (updates)"),
    Key("algo.buffer_capacity", "int", 50_000, "replay capacity"),
    Key("algo.learning_starts", "int", 1000, "transitions collected before off-policy updates"),
    Key("algo.train_every", "int", 1, "transitions per off-policy update"),
    Key("algo.huber_delta", "float", 1.0, "DQN Huber threshold"),
    Key("algo.rho_bar", "float", 1.0, "V-trace rho truncation"),
    Key("algo.c_bar", "float", 1.0, "V-trace c truncation"),
    Key("noise.sigma_explore", "float", 0.1, "DDPG/TD3 exploration noise"),
    Key("noise.sigma_target", "float", 0.2, "TD3 target-policy noise"),
    Key("noise.noise_clip", "float", 0.5, "TD3 target-noise clip"),
    Key("noise.policy_delay", "int", 2, "TD3 actor/target update period"),
    Key("noise.tau", "float", 0.005, "soft target-update rate"),
    Key("net.obs_pool", "int", 1, "average-pool factor applied to observations"),
    Key("net.frame_stack", "int", 1, "consecutive pooled frames stacked as network input"),
    Key("net.convs", "convs", ((16, 8, 4), (32, 4, 2)), "conv layers as filtersxkernelxstride"),
    Key("net.hidden", "ints", (256,), "dense layer widths"),
    Key("net.activation", "str", "relu", "hidden activation: relu, tanh, elu"),
    Key("reward.beta", "float", 0.5, "in-lane bonus"),
    Key("reward.collision_penalty", "float", 100.0, "AC penalty per collision flag"),
    Key("reward.offroad_penalty", "float", 0.5, "AC penalty for leaving the lane"),
    Key("reward.adv_collision_bonus", "float", 5.0, "adversary bonus per victim collision flag"),
    Key("reward.adv_offroad_bonus", "float", 0.05, "adversary bonus for victim lane departure"),
    Key("sim.spawn_jitter", "floats", (2.0, 0.15, 0.02), "spawn perturbation: along (m), across (m), heading (rad)"),
    Key("adversary.victim", "str", "AC-A3C", "frozen victim policy (registry name or scripted-follower)"),
    Key("adversary.algo", "str", "PPO", "adversary learning algorithm"),
    Key("adversary.victim_slot", "int", 0, "victim spawn slot"),
    Key("adversary.slot", "int", 3, "adversary spawn slot"),
    Key("seeds.list", "ints", (), "testing episode seeds; empty uses 0..episodes-1"),
    Key("report.normalize", "str", "executed", "fraction denominator: executed or configured steps"),
    Key("desk_scale.enable", "bool", False, "apply the desk-scale preset"),
)

KEY_INDEX = {k.name: k for k in KEYS}

# Reduced maps, networks and budgets for laptop-CPU runs; explicit settings win.
DESK_PRESET = {
    "scenario.steps": 200,
    "train.iterations": 10,
    "train.adv_iterations": 8,
    "train.rollout_steps": 2048,
    "train.total_steps": 100_000,
    "train.adv_total_steps": 60_000,
    "train.max_steps": 200,
    "train.eval_episodes": 10,
    "train.eval_every": 10,
    "algo.eps_decay_steps": 8000,
    "algo.target_sync": 250,
    "algo.buffer_capacity": 60_000,
    "algo.learning_starts": 500,
    "algo.train_every": 2,
    "net.obs_pool": 4,
    "net.frame_stack": 2,
    "net.convs": (),
    "net.hidden": (64,),
}


def parse_value(name: str, text: str):
    key = KEY_INDEX.get(name)
    if key is None:
        raise ConfigurationError(f"unknown config key {name!r}")
    try:
        return _PARSERS[key.kind](text)
    except (ValueError, TypeError) as exc:
        raise ConfigurationError(f"bad value {text!r} for config key {name!r}: {exc}") from exc


def parse_assignment(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigurationError(f"expected KEY=VALUE, got {text!r}")
    name, value = text.split("=", 1)
    name = name.strip()
    return name, parse_value(name, value.strip())


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            name, value = parse_assignment(line)
        except ConfigurationError as exc:
            raise ConfigurationError(f"line {lineno}: {exc}") from exc
        values[name] = value
    return values


class Config:
    """Resolved settings: defaults, then the desk preset (if enabled), then explicit values."""

    def __init__(self, explicit: dict | None = None, desk_scale: bool | None = None):
        explicit = dict(explicit or {})
        for name in explicit:
            if name not in KEY_INDEX:
                raise ConfigurationError(f"unknown config key {name!r}")
        if desk_scale is not None:
            explicit.setdefault("desk_scale.enable", desk_scale)
        values = {k.name: k.default for k in KEYS}
        if explicit.get("desk_scale.enable", False):
            values.update(DESK_PRESET)
        values.update(explicit)
        self.values = values
        self.explicit = explicit

    @classmethod
    def load(cls, path=None, overrides=(), desk_scale: bool = False) -> "Config":
        explicit = {}
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
            explicit.update(parse_config_text(text))
        for item in overrides:
            name, value = parse_assignment(item)
            explicit[name] = value
        if desk_scale:
            explicit["desk_scale.enable"] = True
        return cls(explicit)

    def __getitem__(self, name: str):
        if name not in self.values:
            raise ConfigurationError(f"unknown config key {name!r}")
        return self.values[name]

    def with_values(self, **updates) -> "Config":
        """Copy with extra explicit values; keyword names use ``__`` for dots."""
        explicit = dict(self.explicit)
        explicit.update({k.replace("__", "."): v for k, v in updates.items()})
        return Config(explicit)

    def dump(self) -> str:
        return "".join(f"{k.name} = {_fmt(self.values[k.name])}\n" for k in KEYS)


def keys_help() -> str:
    width = max(len(k.name) for k in KEYS)
    lines = ["config keys (default; desk-scale preset value in brackets):"]
    for k in KEYS:
        desk = f" [{_fmt(DESK_PRESET[k.name])}]" if k.name in DESK_PRESET else ""
        lines.append(f"  {k.name:<{width}}  {_fmt(k.default)}{desk}  {k.help}")
    return "\n".join(lines)
