"""Deterministic 2D world: scripted kinematic agents, static obstacles,
rectangle collision tracking.

Agents follow waypoint polylines at scripted leg speeds (linear
interpolation, optional accel-limited speed changes) and may switch to an
alternate script when the ego first comes within a trigger distance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import ControlCommand, VehicleParams, VehicleState, step_dynamics
from ..planner import Route


@dataclass
class AgentSpec:
    name: str
    waypoints: np.ndarray                  # (K, 2)
    speeds: np.ndarray                     # (K-1,) target speed per leg, m/s
    length: float = 4.5
    width: float = 2.0
    height: float = 1.6
    accel: float | None = None             # None: leg speeds apply instantly
    trigger_distance: float | None = None  # ego proximity that flips the script
    post_waypoints: np.ndarray | None = None
    post_speeds: np.ndarray | None = None
    post_accel: float | None = None

    def __post_init__(self) -> None:
        self.waypoints = np.asarray(self.waypoints, dtype=np.float64)
        self.speeds = np.asarray(self.speeds, dtype=np.float64)
        if self.waypoints.shape[0] < 2:
            raise ValueError(f"agent {self.name}: need at least two waypoints")
        if self.speeds.shape[0] != self.waypoints.shape[0] - 1:
            raise ValueError(f"agent {self.name}: one speed per leg required")
        if self.post_waypoints is not None:
            self.post_waypoints = np.asarray(self.post_waypoints, dtype=np.float64)
            self.post_speeds = np.asarray(self.post_speeds, dtype=np.float64)


@dataclass
class StaticObstacle:
    points: np.ndarray    # (K, 2) closed polygon (last edge wraps to first)
    height: float = 2.0

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64)


class Agent:
    """Runtime script follower for one AgentSpec."""

    def __init__(self, spec: AgentSpec):
        self.spec = spec
        self.position = spec.waypoints[0].copy()
        self.heading = _leg_heading(spec.waypoints, 0)
        self.speed = 0.0 if spec.accel is not None else float(spec.speeds[0])
        self.leg = 0
        self.leg_progress = 0.0
        self.triggered = False
        self.done = False
        self._waypoints = spec.waypoints
        self._speeds = spec.speeds
        self._accel = spec.accel

    def maybe_trigger(self, ego: VehicleState) -> None:
        if self.triggered or self.spec.trigger_distance is None:
            return
        if math.hypot(ego.x - self.position[0], ego.y - self.position[1]) \
                < self.spec.trigger_distance:
            self.triggered = True
            start = self.position.copy()
            self._waypoints = np.vstack([start, self.spec.post_waypoints])
            self._speeds = np.asarray(self.spec.post_speeds, dtype=np.float64)
            self._accel = self.spec.post_accel
            self.leg = 0
            self.leg_progress = 0.0
            self.done = False
            self.heading = _leg_heading(self._waypoints, 0)

    def step(self, dt: float) -> None:
        if self.done:
            self.speed = 0.0
            return
        target = float(self._speeds[self.leg])
        if self._accel is None:
            self.speed = target
        else:
            dv = target - self.speed
            self.speed += max(-self._accel * dt, min(self._accel * dt, dv))
        remaining = self.speed * dt
        while remaining > 1e-12 and not self.done:
            a = self._waypoints[self.leg]
            b = self._waypoints[self.leg + 1]
            leg_len = float(np.linalg.norm(b - a))
            left = leg_len - self.leg_progress
            if remaining < left:
                self.leg_progress += remaining
                remaining = 0.0
            else:
                remaining -= left
                self.leg += 1
                self.leg_progress = 0.0
                if self.leg >= len(self._speeds):
                    self.done = True
                    self.position = self._waypoints[-1].copy()
                    return
                self.heading = _leg_heading(self._waypoints, self.leg)
        a = self._waypoints[self.leg]
        b = self._waypoints[self.leg + 1]
        leg_len = max(float(np.linalg.norm(b - a)), 1e-12)
        frac = self.leg_progress / leg_len
        self.position = a + frac * (b - a)
        self.heading = _leg_heading(self._waypoints, self.leg)

    def corners(self) -> np.ndarray:
        return rect_corners(self.position[0], self.position[1], self.heading,
                            self.spec.length, self.spec.width)


def _leg_heading(waypoints: np.ndarray, leg: int) -> float:
    d = waypoints[leg + 1] - waypoints[leg]
    return math.atan2(d[1], d[0])


def rect_corners(cx: float, cy: float, phi: float, length: float,
                 width: float) -> np.ndarray:
    """(4, 2) corners of an oriented rectangle centered at (cx, cy)."""
    c, s = math.cos(phi), math.sin(phi)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def rects_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons given as (K, 2) corners."""
    for poly in (a, b):
        n = len(poly)
        for i in range(n):
            edge = poly[(i + 1) % n] - poly[i]
            axis = np.array([-edge[1], edge[0]])
            pa = a @ axis
            pb = b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


@dataclass
class World:
    params: VehicleParams
    ego: VehicleState
    route: Route
    agents: list[Agent] = field(default_factory=list)
    statics: list[StaticObstacle] = field(default_factory=list)
    bounds: tuple[float, float, float, float] = (-50.0, 400.0, -60.0, 60.0)
    collision_episodes: int = 0
    _in_collision: dict[str, bool] = field(default_factory=dict)

    def ego_corners(self) -> np.ndarray:
        return rect_corners(self.ego.x, self.ego.y, self.ego.phi,
                            self.params.length, self.params.width)

    def ego_in_bounds(self) -> bool:
        x0, x1, y0, y1 = self.bounds
        return x0 <= self.ego.x <= x1 and y0 <= self.ego.y <= y1


def check_collision(world: World) -> list[str]:
    """Names of agents/statics whose footprint overlaps the ego right now."""
    ego_rect = world.ego_corners()
    hits = []
    for agent in world.agents:
        if rects_overlap(ego_rect, agent.corners()):
            hits.append(agent.spec.name)
    for i, obs in enumerate(world.statics):
        if rects_overlap(ego_rect, obs.points):
            hits.append(f"static_{i}")
    return hits


def step_world(world: World, command: ControlCommand, dt: float) -> dict:
    """Advance ego and agents one tick; count collision episodes.

    A contiguous overlap interval with one obstacle counts as a single
    episode; separate obstacles count separately.
    """
    world.ego = step_dynamics(world.ego, command, dt, world.params)
    for agent in world.agents:
        agent.maybe_trigger(world.ego)
        agent.step(dt)
    colliding = check_collision(world)
    for name in colliding:
        if not world._in_collision.get(name, False):
            world.collision_episodes += 1
    for name in list(world._in_collision) + colliding:
        world._in_collision[name] = name in colliding
    return {"colliding": colliding, "any_collision": bool(colliding)}
