"""Kinematic 2D driving world: vehicle motion, event detection, scripted traffic."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    convex_overlap,
    obb_corners,
    points_in_any,
    polyline_distance,
    polyline_point_at,
    polyline_project,
    wrap_angle,
)
from .maps import GOAL_RADIUS, MapSpec

V_MAX = 20.0
A_THROTTLE = 4.0
A_BRAKE = 8.0
DRAG = 0.1
WHEELBASE = 2.5
MAX_STEER = math.radians(35.0)
HALF_LENGTH = 2.25
HALF_WIDTH = 0.9

SCRIPTED_TARGET_SPEED = 6.0
SCRIPTED_BRAKE_GAP = 6.0
SCRIPTED_SPEED_GAIN = 0.5

ROLES = ("AC", "adversary", "scripted")


@dataclass(frozen=True)
class ControlCommand:
    steer: float = 0.0
    throttle: float = 0.0
    brake: float = 0.0

    def clamped(self) -> "ControlCommand":
        return ControlCommand(
            min(max(float(self.steer), -1.0), 1.0),
            min(max(float(self.throttle), 0.0), 1.0),
            min(max(float(self.brake), 0.0), 1.0),
        )


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float
    route: str
    role: str
    half_length: float = HALF_LENGTH
    half_width: float = HALF_WIDTH

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def footprint(self) -> np.ndarray:
        return obb_corners(self.x, self.y, self.heading, self.half_length, self.half_width)


@dataclass(frozen=True)
class Events:
    cv: bool = False
    co: bool = False
    io: bool = False
    in_corridor: bool = True
    collided_with: str | None = None


@dataclass
class WorldState:
    map: MapSpec
    vehicles: dict  # agent id -> VehicleState, live agents only, roster order
    events: dict = field(default_factory=dict)
    distance: dict = field(default_factory=dict)
    t: int = 0
    rng: np.random.Generator | None = None
    config: object = None  # the EpisodeConfig driving this world, if any

    def copy(self) -> "WorldState":
        return WorldState(
            self.map, dict(self.vehicles), dict(self.events), dict(self.distance), self.t, self.rng, self.config
        )


def step_vehicle(state: VehicleState, control: ControlCommand, dt: float) -> VehicleState:
    c = control.clamped()
    speed = state.speed + (A_THROTTLE * c.throttle - A_BRAKE * c.brake - DRAG * state.speed) * dt
    speed = min(max(speed, 0.0), V_MAX)
    heading = state.heading + (state.speed / WHEELBASE) * math.tan(c.steer * MAX_STEER) * dt
    x = state.x + speed * dt * math.cos(heading)
    y = state.y + speed * dt * math.sin(heading)
    return replace(state, x=x, y=y, heading=heading, speed=speed)


def distance_to_goal(world_map: MapSpec, vehicle: VehicleState) -> float:
    goal = world_map.routes[vehicle.route].goal
    d = math.hypot(vehicle.x - goal[0], vehicle.y - goal[1])
    return 0.0 if d <= GOAL_RADIUS else d


def detect_events(world: WorldState) -> WorldState:
    """Recompute CV/CO/IO flags and distance-to-goal for every live vehicle (in place)."""
    ids = list(world.vehicles)
    feet = {a: world.vehicles[a].footprint() for a in ids}
    collided: dict[str, str | None] = {a: None for a in ids}
    reach = 2.0 * math.hypot(HALF_LENGTH, HALF_WIDTH)
    for i, a in enumerate(ids):
        va = world.vehicles[a]
        for b in ids[i + 1 :]:
            vb = world.vehicles[b]
            if math.hypot(va.x - vb.x, va.y - vb.y) > reach + 1e-9:
                continue
            if convex_overlap(feet[a], feet[b]):
                collided[a] = collided[a] or b
                collided[b] = collided[b] or a
    m = world.map
    for a in ids:
        v = world.vehicles[a]
        center = np.array([[v.x, v.y]])
        on_road = bool(points_in_any(center, m.drivable)[0])
        hit_static = any(convex_overlap(feet[a], poly) for poly in m.obstacles)
        route = m.routes[v.route]
        in_corridor = bool(polyline_distance(center, route.polyline)[0] <= route.half_width)
        world.events[a] = Events(
            cv=collided[a] is not None,
            co=hit_static or not on_road,
            io=on_road and not in_corridor,
            in_corridor=in_corridor,
            collided_with=collided[a],
        )
        world.distance[a] = distance_to_goal(m, v)
    return world


def _blocked_ahead(world: WorldState, agent_id: str) -> bool:
    me = world.vehicles[agent_id]
    route = world.map.routes[me.route]
    h = np.array([math.cos(me.heading), math.sin(me.heading)])
    for other_id, other in world.vehicles.items():
        if other_id == agent_id:
            continue
        pts = np.vstack([other.footprint(), [[other.x, other.y]]])
        lon = (pts - me.position) @ h
        gap = lon - me.half_length
        ahead = (lon > 0.0) & (gap <= SCRIPTED_BRAKE_GAP)
        if not ahead.any():
            continue
        in_lane = polyline_distance(pts[ahead], route.polyline) <= route.half_width
        if in_lane.any():
            return True
    return False


def scripted_traffic_policy(world: WorldState, agent_id: str) -> ControlCommand:
    """Pure-pursuit lane follower at a fixed cruise speed with a brake-for-obstacle rule."""
    v = world.vehicles[agent_id]
    route = world.map.routes[v.route]
    s = polyline_project(v.position, route.polyline)
    lookahead = max(5.0, 0.8 * v.speed)
    target = polyline_point_at(route.polyline, s + lookahead)
    alpha = wrap_angle(math.atan2(target[1] - v.y, target[0] - v.x) - v.heading)
    delta = math.atan2(2.0 * WHEELBASE * math.sin(alpha), lookahead)
    steer = min(max(delta / MAX_STEER, -1.0), 1.0)
    if _blocked_ahead(world, agent_id):
        return ControlCommand(steer=steer, throttle=0.0, brake=1.0)
    throttle = min(max(SCRIPTED_SPEED_GAIN * (SCRIPTED_TARGET_SPEED - v.speed), 0.0), 1.0)
    return ControlCommand(steer=steer, throttle=throttle, brake=0.0)
