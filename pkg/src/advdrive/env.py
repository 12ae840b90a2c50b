"""Multi-agent driving environment: reset/step over joint actions, rendering, rewards."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import raster
from .errors import ConfigurationError, ProtocolError
from .maps import build_map
from .world import (
    ROLES,
    ControlCommand,
    Events,
    VehicleState,
    WorldState,
    detect_events,
    scripted_traffic_policy,
    step_vehicle,
)

OBS_SIZE = 84
CELL_SIZE = 0.5
GOAL_RAY_RADIUS = 0.75
N_DISCRETE_ACTIONS = 9

_STEER_LEVELS = (-0.5, 0.0, 0.5)
_PEDAL_LEVELS = ((1.0, 0.0), (0.0, 0.0), (0.0, 1.0))


@dataclass(frozen=True)
class RewardConstants:
    beta: float = 0.5
    collision_penalty: float = 100.0
    offroad_penalty: float = 0.5
    adv_collision_bonus: float = 5.0
    adv_offroad_bonus: float = 0.05


@dataclass(frozen=True)
class RosterEntry:
    agent_id: str
    role: str = "AC"
    policy: str = ""
    slot: int | None = None
    victim: str | None = None


@dataclass(frozen=True)
class EpisodeConfig:
    map_id: str
    roster: tuple
    max_steps: int = 2000
    seed: int = 0
    dt: float = 0.1
    rewards: RewardConstants = field(default_factory=RewardConstants)
    # uniform spawn perturbation half-ranges: along lane (m), across lane (m), heading (rad)
    spawn_jitter: tuple = (2.0, 0.15, 0.02)

    def __post_init__(self):
        if self.max_steps <= 0:
            raise ConfigurationError("max_steps must be positive")
        if not self.roster:
            raise ConfigurationError("roster is empty")
        ids = [r.agent_id for r in self.roster]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"duplicate agent ids in roster: {ids}")
        for r in self.roster:
            if r.role not in ROLES:
                raise ConfigurationError(f"unknown role {r.role!r} for {r.agent_id}")
            if r.role == "adversary" and r.victim not in ids:
                raise ConfigurationError(f"adversary {r.agent_id} needs a victim from the roster")

    def entry(self, agent_id: str) -> RosterEntry:
        for r in self.roster:
            if r.agent_id == agent_id:
                return r
        raise ProtocolError(f"unknown agent {agent_id!r}")


@dataclass
class StepResult:
    observation: np.ndarray | None
    reward: float
    done: bool
    info: dict


# ---------------------------------------------------------------- observation

def _cell_offsets() -> tuple[np.ndarray, np.ndarray]:
    """Forward offset per row and rightward offset per column (m) of cell centers.

    The anchor is the bottom-center edge of the grid, so row 0 is farthest ahead.
    """
    forward = (OBS_SIZE - np.arange(OBS_SIZE) - 0.5) * CELL_SIZE
    right = (np.arange(OBS_SIZE) - OBS_SIZE / 2 + 0.5) * CELL_SIZE
    return forward, right


ROW_FORWARD, COL_RIGHT = _cell_offsets()
_VIEW_F = (0.0, OBS_SIZE * CELL_SIZE)
_VIEW_R = (-OBS_SIZE * CELL_SIZE / 2, OBS_SIZE * CELL_SIZE / 2)


def cell_world_points(x: float, y: float, heading: float) -> np.ndarray:
    """World coordinates of every cell center, row-major, shape (84*84, 2)."""
    c, s = math.cos(heading), math.sin(heading)
    f = np.repeat(ROW_FORWARD, OBS_SIZE)
    r = np.tile(COL_RIGHT, OBS_SIZE)
    return np.stack([x + f * c + r * s, y + f * s - r * c], axis=1)


class _EgoFrame:
    def __init__(self, x: float, y: float, heading: float):
        self.origin = np.array([x, y])
        c, s = math.cos(heading), math.sin(heading)
        # columns: forward axis, rightward axis
        self.basis = np.array([[c, s], [s, -c]])

    def __call__(self, pts) -> np.ndarray:
        return np.ascontiguousarray((pts - self.origin) @ self.basis)


_RASTER_CACHE: dict = {}


def _map_layers(world_map) -> dict:
    """World-frame shape stacks for one MapSpec, built once and reused."""
    key = id(world_map)
    hit = _RASTER_CACHE.get(key)
    if hit is not None and hit["map"] is world_map:
        return hit
    layers = {
        "map": world_map,
        "drivable": raster.pad_stack(world_map.drivable),
        "routes": {
            rid: (raster.capsule_rects(r.polyline, r.half_width), r.polyline, r.half_width)
            for rid, r in world_map.routes.items()
        },
    }
    if len(_RASTER_CACHE) > 64:
        _RASTER_CACHE.clear()
    _RASTER_CACHE[key] = layers
    return layers


def _footprints(vehicles) -> np.ndarray:
    x = np.array([v.x for v in vehicles])
    y = np.array([v.y for v in vehicles])
    h = np.array([v.heading for v in vehicles])
    hl = np.array([v.half_length for v in vehicles])[:, None]
    hw = np.array([v.half_width for v in vehicles])[:, None]
    fwd = np.stack([np.cos(h), np.sin(h)], axis=1) * hl
    left = np.stack([-np.sin(h), np.cos(h)], axis=1) * hw
    c = np.stack([x, y], axis=1)
    return np.stack([c - fwd - left, c + fwd - left, c + fwd + left, c - fwd + left], axis=1)


def render_observation(world: WorldState, agent_id: str) -> np.ndarray:
    """84x84x3 ego-centric grid: drivable mask, other vehicles, own corridor + goal ray.

    The agent sits at the bottom-center edge facing up (0.5 m cells), so only
    the forward half-plane is ever rasterized.
    """
    me = world.vehicles[agent_id]
    ego = _EgoFrame(me.x, me.y, me.heading)
    m = world.map
    layers = _map_layers(m)
    shape = (OBS_SIZE, OBS_SIZE)

    road = np.zeros(shape, dtype=np.bool_)
    raster.fill_convex(road, ego(layers["drivable"]), CELL_SIZE)

    cars = np.zeros(shape, dtype=np.bool_)
    others = [v for a, v in world.vehicles.items() if a != agent_id]
    if others:
        raster.fill_convex(cars, ego(_footprints(others)), CELL_SIZE)

    rects, polyline, half_width = layers["routes"][me.route]
    lane = np.zeros(shape, dtype=np.bool_)
    raster.fill_convex(lane, ego(rects), CELL_SIZE)
    raster.fill_discs(lane, ego(polyline), half_width, CELL_SIZE)

    ray_line = np.array([[me.x, me.y], m.routes[me.route].goal])
    ray = np.zeros(shape, dtype=np.bool_)
    raster.fill_convex(ray, ego(raster.capsule_rects(ray_line, GOAL_RAY_RADIUS)), CELL_SIZE)
    raster.fill_discs(ray, ego(ray_line), GOAL_RAY_RADIUS, CELL_SIZE)

    grid = np.empty((OBS_SIZE, OBS_SIZE, 3), dtype=np.float32)
    grid[..., 0] = road
    grid[..., 1] = cars
    grid[..., 2] = 0.5 * lane + 0.5 * ray
    return grid


# ---------------------------------------------------------------- actions

def decode_discrete_action(index: int) -> ControlCommand:
    if not isinstance(index, (int, np.integer)) or not 0 <= index < N_DISCRETE_ACTIONS:
        raise ProtocolError(f"discrete action must be an integer in [0, 8], got {index!r}")
    s, m = divmod(int(index), 3)
    throttle, brake = _PEDAL_LEVELS[m]
    return ControlCommand(steer=_STEER_LEVELS[s], throttle=throttle, brake=brake)


def decode_continuous_action(a) -> ControlCommand:
    a0, a1 = (min(max(float(v), -1.0), 1.0) for v in np.asarray(a, dtype=np.float64).ravel()[:2])
    return ControlCommand(steer=a0, throttle=max(a1, 0.0), brake=max(-a1, 0.0))


# ---------------------------------------------------------------- rewards

def _flags(world: WorldState, agent_id: str) -> Events:
    return world.events.get(agent_id, Events())


def reward_ac(prev: WorldState, cur: WorldState, agent_id: str, constants: RewardConstants = RewardConstants()) -> float:
    ev = _flags(cur, agent_id)
    progress = prev.distance[agent_id] - cur.distance[agent_id]
    speed = cur.vehicles[agent_id].speed
    beta = constants.beta if ev.in_corridor else 0.0
    return (
        progress
        + speed / 10.0
        - constants.collision_penalty * (int(ev.cv) + int(ev.co))
        - constants.offroad_penalty * int(ev.io)
        + beta
    )


def reward_adv(
    prev: WorldState,
    cur: WorldState,
    adversary_id: str,
    victim_id: str,
    constants: RewardConstants = RewardConstants(),
) -> float:
    """Adversary's own progress/speed/lane bonus plus a bonus for the victim's failures."""
    own = _flags(cur, adversary_id)
    victim = _flags(cur, victim_id)
    progress = prev.distance[adversary_id] - cur.distance[adversary_id]
    speed = cur.vehicles[adversary_id].speed
    beta = constants.beta if own.in_corridor else 0.0
    return (
        progress
        + speed / 10.0
        + constants.adv_collision_bonus * (int(victim.cv) + int(victim.co))
        + constants.adv_offroad_bonus * int(victim.io)
        + beta
    )


# ---------------------------------------------------------------- reset / step

def env_reset(config: EpisodeConfig) -> tuple[WorldState, dict]:
    world_map = build_map(config.map_id)
    n_slots = len(world_map.spawns)
    if len(config.roster) > n_slots:
        raise ConfigurationError(f"roster of {len(config.roster)} exceeds {n_slots} spawn slots on {config.map_id}")
    rng = np.random.default_rng(config.seed)
    jl, jw, jh = config.spawn_jitter
    vehicles = {}
    for i, entry in enumerate(config.roster):
        slot_index = i if entry.slot is None else entry.slot
        if not 0 <= slot_index < n_slots:
            raise ConfigurationError(f"spawn slot {slot_index} out of range for {config.map_id}")
        slot = world_map.spawns[slot_index]
        u = rng.uniform(-1.0, 1.0, size=3)
        c, s = math.cos(slot.heading), math.sin(slot.heading)
        dl, dw = jl * u[0], jw * u[1]
        vehicles[entry.agent_id] = VehicleState(
            x=slot.x + dl * c - dw * s,
            y=slot.y + dl * s + dw * c,
            heading=slot.heading + jh * u[2],
            speed=0.0,
            route=slot.route_id,
            role=entry.role,
        )
    world = WorldState(world_map, vehicles, t=0, rng=rng, config=config)
    detect_events(world)
    # flags describe the last transition; nothing has happened yet
    world.events = {a: Events(in_corridor=world.events[a].in_corridor) for a in vehicles}
    obs = {a: render_observation(world, a) for a, v in vehicles.items() if v.role != "scripted"}
    return world, obs


def env_step(world: WorldState, joint_actions: dict) -> tuple[WorldState, dict]:
    """Advance every live vehicle one tick; returns the new world and a StepResult per agent.

    Agents that finish this tick are removed from the returned world.
    """
    config: EpisodeConfig = world.config
    for agent_id in joint_actions:
        if agent_id not in world.vehicles:
            raise ProtocolError(f"action for unknown or finished agent {agent_id!r}")
        if world.vehicles[agent_id].role == "scripted":
            raise ProtocolError(f"agent {agent_id!r} is scripted; its controls are internal")
    controls = {}
    for agent_id, v in world.vehicles.items():
        if v.role == "scripted":
            controls[agent_id] = scripted_traffic_policy(world, agent_id)
        elif agent_id in joint_actions:
            cmd = joint_actions[agent_id]
            if not isinstance(cmd, ControlCommand):
                raise ProtocolError(f"action for {agent_id!r} must be a ControlCommand")
            controls[agent_id] = cmd
        else:
            raise ProtocolError(f"missing action for live agent {agent_id!r}")

    cur = world.copy()
    cur.vehicles = {a: step_vehicle(v, controls[a], config.dt) for a, v in world.vehicles.items()}
    cur.t = world.t + 1
    detect_events(cur)

    results = {}
    for agent_id, v in cur.vehicles.items():
        ev = cur.events[agent_id]
        d = cur.distance[agent_id]
        entry = config.entry(agent_id)
        if v.role == "AC":
            r = reward_ac(world, cur, agent_id, config.rewards)
        elif v.role == "adversary":
            r = reward_adv(world, cur, agent_id, entry.victim, config.rewards)
        else:
            r = 0.0
        if ev.cv or ev.co:
            reason = "crash"
        elif d == 0.0:
            reason = "goal"
        elif cur.t >= config.max_steps:
            reason = "time_limit"
        else:
            reason = None
        obs = None if v.role == "scripted" else render_observation(cur, agent_id)
        info = {
            "CV": ev.cv,
            "CO": ev.co,
            "IO": ev.io,
            "D": d,
            "F": v.speed,
            "collided_with": ev.collided_with,
            "reason": reason,
            "role": v.role,
            "x": v.x,
            "y": v.y,
            "heading": v.heading,
        }
        results[agent_id] = StepResult(obs, float(r), reason is not None, info)

    finished = [a for a, res in results.items() if res.done]
    nxt = cur.copy()
    for a in finished:
        del nxt.vehicles[a]
        nxt.events.pop(a, None)
        nxt.distance.pop(a, None)
    return nxt, results


def episode_over(world: WorldState) -> bool:
    """True once no learned (non-scripted) agent is still driving."""
    return not any(v.role != "scripted" for v in world.vehicles.values())


# ---------------------------------------------------------------- per-step log

LOG_COLUMNS = ("episode_id", "t", "agent_id", "role", "x", "y", "heading", "F", "D", "CV", "CO", "IO", "reward")


class EpisodeLogWriter:
    """Writes one CSV line per agent per step; ``#`` lines carry episode metadata."""

    def __init__(self, path, episode_id: str, metadata: dict, policies: dict):
        self._fh = open(path, "w", newline="\n")
        self.episode_id = episode_id
        for key in sorted(metadata):
            self._fh.write(f"# {key}={metadata[key]}\n")
        for agent_id, name in policies.items():
            self._fh.write(f"# policy {agent_id}={name}\n")
        self._fh.write(",".join(LOG_COLUMNS) + "\n")

    def write_step(self, t: int, results: dict) -> None:
        for agent_id, res in results.items():
            info = res.info
            self._fh.write(
                f"{self.episode_id},{t},{agent_id},{info['role']},{info['x']:.4f},{info['y']:.4f},{info['heading']:.5f},"
                f"{info['F']:.4f},{info['D']:.4f},{int(info['CV'])},{int(info['CO'])},{int(info['IO'])},"
                f"{res.reward:.6f}\n"
            )

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
