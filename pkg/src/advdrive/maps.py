"""Hard-coded road maps: env_1 (four-way), env_2 (T-junction), straight (desk preset).

Every map is a single junction at the origin with road arms of ``ARM_LENGTH``
meters, two lanes of ``LANE_WIDTH`` each, right-hand traffic and a footpath
strip along each road edge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .geometry import rect, rigid_transform

LANE_WIDTH = 3.5
HALF_ROAD = LANE_WIDTH
ARM_LENGTH = 100.0
FOOTPATH_WIDTH = 2.0
CURB_RETURN = 6.0  # corner chamfer between adjacent arms; lets right turns clear the curb
GOAL_RADIUS = 2.0
GOAL_OFFSET = 60.0
MAP_VERSION = 1

_DIRS = {"N": (0.0, 1.0), "S": (0.0, -1.0), "E": (1.0, 0.0), "W": (-1.0, 0.0)}


@dataclass(frozen=True)
class Route:
    route_id: str
    polyline: np.ndarray
    half_width: float
    goal: np.ndarray


@dataclass(frozen=True)
class SpawnSlot:
    x: float
    y: float
    heading: float
    route_id: str


@dataclass(frozen=True)
class MapSpec:
    map_id: str
    drivable: tuple
    obstacles: tuple
    routes: dict
    spawns: tuple
    arms: tuple

    @property
    def junction_degree(self) -> int:
        return len(self.arms)

    def transformed(self, angle: float, offset) -> "MapSpec":
        """Rigidly rotate by ``angle`` about the origin, then translate."""
        tf = lambda p: rigid_transform(p, angle, offset)
        routes = {
            k: Route(r.route_id, tf(r.polyline), r.half_width, tf(r.goal)[0]) for k, r in self.routes.items()
        }
        spawns = []
        for s in self.spawns:
            x, y = tf(np.array([s.x, s.y]))[0]
            spawns.append(SpawnSlot(float(x), float(y), s.heading + angle, s.route_id))
        return MapSpec(
            self.map_id,
            tuple(tf(p) for p in self.drivable),
            tuple(tf(p) for p in self.obstacles),
            routes,
            tuple(spawns),
            self.arms,
        )

    def dump_lines(self) -> list[str]:
        """Structured-text records: ``kind,id,values...`` one per line.

        drivable/obstacle: polygon vertices x0,y0,x1,y1,...
        corridor: half_width followed by polyline vertices
        spawn: x,y,heading ; goal: x,y
        """
        fmt = lambda arr: ",".join(repr(float(v)) for v in np.ravel(arr))
        lines = [f"map,{self.map_id},{MAP_VERSION},{self.junction_degree}"]
        lines += [f"drivable,{i},{fmt(p)}" for i, p in enumerate(self.drivable)]
        lines += [f"obstacle,{i},{fmt(p)}" for i, p in enumerate(self.obstacles)]
        for rid in sorted(self.routes):
            r = self.routes[rid]
            lines.append(f"corridor,{rid},{r.half_width!r},{fmt(r.polyline)}")
            lines.append(f"goal,{rid},{fmt(r.goal)}")
        lines += [f"spawn,{i},{fmt([s.x, s.y, s.heading])},{s.route_id}" for i, s in enumerate(self.spawns)]
        return lines


def _right(u):
    return np.array([u[1], -u[0]])


def _route(arm_in: str, arm_out: str, goal_offset: float = GOAL_OFFSET) -> Route:
    a = np.array(_DIRS[arm_in])
    b = np.array(_DIRS[arm_out])
    u_in = -a
    off_in = 0.5 * LANE_WIDTH * _right(u_in)
    off_out = 0.5 * LANE_WIDTH * _right(b)
    start = a * ARM_LENGTH + off_in
    end = b * ARM_LENGTH + off_out
    if np.allclose(b, -a):
        pts = [start, end]
    else:
        turn_right = u_in[0] * b[1] - u_in[1] * b[0] < 0
        mouth = HALF_ROAD + (CURB_RETURN if turn_right else 0.0)
        entry = a * mouth + off_in
        exit_ = b * mouth + off_out
        radius = 0.5 * LANE_WIDTH + CURB_RETURN if turn_right else 1.5 * LANE_WIDTH
        side = _right(u_in) if turn_right else -_right(u_in)
        center = entry + radius * side
        a0 = math.atan2(*(entry - center)[::-1])
        a1 = math.atan2(*(exit_ - center)[::-1])
        sweep = (a1 - a0 + math.pi) % (2 * math.pi) - math.pi
        arc = [center + radius * np.array([math.cos(a0 + sweep * k / 8), math.sin(a0 + sweep * k / 8)]) for k in range(9)]
        pts = [start, *arc, end]
    goal = b * goal_offset + off_out
    return Route(f"{arm_in}-{arm_out}", np.array(pts, dtype=np.float64), 0.5 * LANE_WIDTH, goal)


def _slot(route: Route, arm_in: str, dist: float) -> SpawnSlot:
    a = np.array(_DIRS[arm_in])
    u_in = -a
    p = a * dist + 0.5 * LANE_WIDTH * _right(u_in)
    return SpawnSlot(float(p[0]), float(p[1]), math.atan2(u_in[1], u_in[0]), route.route_id)


def _ccw(poly: np.ndarray) -> np.ndarray:
    area = np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1])
    return poly if area > 0 else poly[::-1].copy()


def _arm_geometry(arms) -> tuple[list, list]:
    """Drivable pieces and footpath strips for a junction with the given arms."""
    h, L, f, c = HALF_ROAD, ARM_LENGTH, FOOTPATH_WIDTH, CURB_RETURN
    drivable = [rect(-h, -h, h, h)]
    obstacles = []
    # corners (sx, sy) whose two adjacent arms both exist get a chamfered curb return
    corners = [
        (sx, sy)
        for sx, ax in ((1, "E"), (-1, "W"))
        for sy, ay in ((1, "N"), (-1, "S"))
        if ax in arms and ay in arms
    ]
    cut = {(sx, sy): c for sx, sy in corners}

    def start(sx, sy):
        return h + cut.get((sx, sy), 0.0)

    for arm in arms:
        if arm in ("E", "W"):
            sx = 1 if arm == "E" else -1
            drivable.append(rect(min(sx * h, sx * L), -h, max(sx * h, sx * L), h))
            for sy in (1, -1):
                x0 = sx * start(sx, sy)
                y_in, y_out = sy * h, sy * (h + f)
                obstacles.append(rect(min(x0, sx * L), min(y_in, y_out), max(x0, sx * L), max(y_in, y_out)))
        else:
            sy = 1 if arm == "N" else -1
            drivable.append(rect(-h, min(sy * h, sy * L), h, max(sy * h, sy * L)))
            for sx in (1, -1):
                y0 = sy * start(sx, sy)
                x_in, x_out = sx * h, sx * (h + f)
                obstacles.append(rect(min(x_in, x_out), min(y0, sy * L), max(x_in, x_out), max(y0, sy * L)))
    for sx, sy in corners:
        p = np.array([sx * h, sy * h])
        q1 = np.array([sx * (h + c), sy * h])
        q2 = np.array([sx * h, sy * (h + c)])
        drivable.append(_ccw(np.array([p, q1, q2])))
        n = np.array([sx, sy]) / np.sqrt(2.0)
        obstacles.append(_ccw(np.array([q1, q2, q2 + f * n, q1 + f * n])))
    # closed junction sides get a footpath across the box
    for side in {"N", "S", "E", "W"} - set(arms):
        if side == "N":
            obstacles.append(rect(-h, h, h, h + f))
        elif side == "S":
            obstacles.append(rect(-h, -h - f, h, -h))
        elif side == "E":
            obstacles.append(rect(h, -h, h + f, h))
        else:
            obstacles.append(rect(-h - f, -h, -h, h))
    return drivable, obstacles


def _junction_map(map_id: str, arms: tuple, slot_plan) -> MapSpec:
    drivable, obstacles = _arm_geometry(arms)
    routes = {}
    spawns = []
    for arm_in, arm_out, dist in slot_plan:
        r = routes.setdefault(f"{arm_in}-{arm_out}", _route(arm_in, arm_out))
        spawns.append(_slot(r, arm_in, dist))
    return MapSpec(map_id, tuple(drivable), tuple(obstacles), routes, tuple(spawns), arms)


def _straight_map() -> MapSpec:
    h, f = HALF_ROAD, FOOTPATH_WIDTH
    x0, x1 = -20.0, 180.0
    drivable = (rect(x0, -h, x1, h),)
    obstacles = (rect(x0, h, x1, h + f), rect(x0, -h - f, x1, -h))
    east = Route("W-E", np.array([[x0, -h / 2], [x1, -h / 2]]), h / 2, np.array([100.0, -h / 2]))
    west = Route("E-W", np.array([[x1, h / 2], [x0, h / 2]]), h / 2, np.array([40.0, h / 2]))
    spawns = (
        SpawnSlot(0.0, -h / 2, 0.0, "W-E"),
        SpawnSlot(140.0, h / 2, math.pi, "E-W"),
        SpawnSlot(-12.0, -h / 2, 0.0, "W-E"),
        SpawnSlot(160.0, h / 2, math.pi, "E-W"),
    )
    return MapSpec("straight", drivable, obstacles, {"W-E": east, "E-W": west}, spawns, ("E", "W"))


_ENV1_SLOTS = (
    ("S", "N", 25.0),
    ("N", "S", 25.0),
    ("E", "W", 25.0),
    ("W", "E", 25.0),
    ("S", "E", 45.0),
    ("N", "W", 45.0),
    ("E", "N", 45.0),
    ("W", "S", 45.0),
    ("S", "N", 65.0),
    ("N", "S", 65.0),
    ("E", "W", 65.0),
    ("W", "E", 65.0),
)

_ENV2_SLOTS = (
    ("S", "E", 25.0),
    ("W", "E", 25.0),
    ("E", "W", 25.0),
    ("S", "W", 45.0),
    ("W", "S", 45.0),
    ("E", "S", 45.0),
    ("W", "E", 45.0),
    ("E", "W", 45.0),
    ("S", "E", 65.0),
    ("S", "W", 85.0),
    ("W", "E", 65.0),
    ("E", "W", 65.0),
)

MAP_IDS = ("env_1", "env_2", "straight")


def build_map(map_id: str) -> MapSpec:
    if map_id == "env_1":
        return _junction_map("env_1", ("N", "E", "S", "W"), _ENV1_SLOTS)
    if map_id == "env_2":
        return _junction_map("env_2", ("E", "S", "W"), _ENV2_SLOTS)
    if map_id == "straight":
        return _straight_map()
    raise ConfigurationError(f"unknown map id {map_id!r}; expected one of {MAP_IDS}")
