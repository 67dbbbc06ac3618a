"""Scenario definitions: a straight two-lane road family with scripted
traffic, plus YAML serialization.

Each named scenario is generated from a seed; the seed jitters starting
positions, speeds, and trigger distances so a batch of seeds gives a spread
of encounters rather than one fixed replay.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from ..core import VehicleParams, VehicleState
from ..planner import Route
from ..util import rng_for
from .world import Agent, AgentSpec, StaticObstacle, World

SCENARIO_NAMES = ("overtake", "opposite", "side_cutoff_left",
                  "side_cutoff_right", "rear_passby", "multi_vehicle")
SCHEMA_VERSION = 1

# Road family: ego lane centered on y=0, oncoming lane on y=+4, barriers
# beyond both shoulders.
BARRIER_LOW = -9.0
BARRIER_HIGH = 12.0
ROAD_X0 = -60.0
ROAD_X1 = 380.0


class ScenarioParseError(ValueError):
    def __init__(self, message: str, line: int = 1):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class ScenarioSpec:
    name: str
    seed: int
    duration: float
    ego: VehicleState
    route_points: np.ndarray
    v_ref: float
    agents: list[AgentSpec] = field(default_factory=list)
    statics: list[StaticObstacle] = field(default_factory=list)
    bounds: tuple[float, float, float, float] = (-50.0, 400.0, -60.0, 60.0)

    def __post_init__(self) -> None:
        self.route_points = np.asarray(self.route_points, dtype=np.float64)
        if self.name not in SCENARIO_NAMES:
            raise ValueError(f"unknown scenario name {self.name!r}")
        if self.duration <= 0:
            raise ValueError("duration must be positive")


def _barriers(lo: float = BARRIER_LOW, hi: float = BARRIER_HIGH
              ) -> list[StaticObstacle]:
    return [
        StaticObstacle(np.array([[ROAD_X0, lo - 0.4], [ROAD_X1, lo - 0.4],
                                 [ROAD_X1, lo], [ROAD_X0, lo]])),
        StaticObstacle(np.array([[ROAD_X0, hi], [ROAD_X1, hi],
                                 [ROAD_X1, hi + 0.4], [ROAD_X0, hi + 0.4]])),
    ]


def _ego_start(rng: np.random.Generator) -> VehicleState:
    return VehicleState(x=0.0, y=float(rng.uniform(-0.3, 0.3)),
                        v=float(rng.uniform(5.5, 7.0)), phi=0.0, t=0.0)


def _straight_route(length: float) -> np.ndarray:
    return np.array([[-10.0, 0.0], [length, 0.0]])


def _overtake(rng: np.random.Generator, seed: int) -> ScenarioSpec:
    """One slow lead in the ego lane that speeds up once the ego closes in."""
    x0 = 26.0 + rng.uniform(-3.0, 3.0)
    v_slow = 1.2 * rng.uniform(0.9, 1.1)
    v_fast = 6.6 * rng.uniform(0.95, 1.05)
    lead = AgentSpec(
        name="lead", waypoints=np.array([[x0, 0.0], [400.0, 0.0]]),
        speeds=np.array([v_slow]),
        trigger_distance=15.0 + rng.uniform(-2.0, 2.0),
        post_waypoints=np.array([[420.0, 0.0]]),
        post_speeds=np.array([v_fast]), post_accel=1.6,
    )
    return ScenarioSpec(name="overtake", seed=seed, duration=28.0,
                        ego=_ego_start(rng), route_points=_straight_route(150.0),
                        v_ref=8.0, agents=[lead], statics=_barriers())


def _opposite(rng: np.random.Generator, seed: int) -> ScenarioSpec:
    """Oncoming vehicle straddling into the ego lane."""
    x0 = 150.0 + rng.uniform(-8.0, 8.0)
    y0 = 1.4 + rng.uniform(-0.2, 0.2)
    v = 7.0 * rng.uniform(0.92, 1.08)
    onc = AgentSpec(
        name="oncoming", waypoints=np.array([[x0, y0], [-80.0, y0]]),
        speeds=np.array([v]),
    )
    return ScenarioSpec(name="opposite", seed=seed, duration=24.0,
                        ego=_ego_start(rng), route_points=_straight_route(150.0),
                        v_ref=8.0, agents=[onc], statics=_barriers())


def _side_cutoff(rng: np.random.Generator, seed: int, side: str) -> ScenarioSpec:
    """Parked vehicle that darts across the road when the ego approaches.

    The trigger range is derived from the sampled crossing speed so the ego
    arrives at the crossing point mid-sweep. The crosser starts far enough
    off the road that it spends several seconds visibly in motion before it
    encroaches on the lane: a planner that reads the dart velocity has time
    to stop, while one that only reacts to the lane actually being blocked
    is left under a second from the crossing point, too close for braking
    or any swerve to clear.
    """
    x0 = 60.0 + rng.uniform(-3.0, 3.0)
    if side == "left":
        y0 = 11.5
        y_end = -6.5
        v_cross = 2.0 * rng.uniform(0.95, 1.05)
        gap = 8.0 * (y0 - 2.4) / v_cross + rng.uniform(-0.8, 0.8)
        x_line = x0 + 3.0 * y0 / (y0 - y_end)
        trigger = math.hypot(gap - (x_line - x0), y0)
    else:
        y0 = -9.5
        y_end = 9.5
        v_cross = 1.8 * rng.uniform(0.95, 1.05)
        gap = 8.0 * (-y0 - 2.4) / v_cross + rng.uniform(-0.8, 0.8)
        x_line = x0 + 3.0 * (-y0) / (y_end - y0)
        trigger = math.hypot(gap - (x_line - x0), -y0)
    crosser = AgentSpec(
        name="crosser", waypoints=np.array([[x0, y0], [x0 + 12.0, y0]]),
        speeds=np.array([0.0]),
        trigger_distance=trigger,
        post_waypoints=np.array([[x0 + 3.0, y_end]]),
        post_speeds=np.array([v_cross]),
    )
    # widened verges: the crosser parks well clear of the carriageway; the
    # duration leaves room for a full stop-wait-resume cycle at v_ref
    return ScenarioSpec(name=f"side_cutoff_{side}", seed=seed, duration=30.0,
                        ego=_ego_start(rng), route_points=_straight_route(120.0),
                        v_ref=8.0, agents=[crosser],
                        statics=_barriers(lo=-13.5, hi=15.5))


def _rear_passby(rng: np.random.Generator, seed: int) -> ScenarioSpec:
    """Fast vehicle overtaking the ego from behind in the adjacent lane."""
    x0 = -38.0 + rng.uniform(-4.0, 4.0)
    y0 = 2.7 + rng.uniform(-0.1, 0.1)
    v = 13.0 * rng.uniform(0.95, 1.05)
    passer = AgentSpec(
        name="passer", waypoints=np.array([[x0, y0], [420.0, y0]]),
        speeds=np.array([v]),
    )
    return ScenarioSpec(name="rear_passby", seed=seed, duration=18.0,
                        ego=_ego_start(rng), route_points=_straight_route(120.0),
                        v_ref=8.0, agents=[passer], statics=_barriers())


def _multi_vehicle(rng: np.random.Generator, seed: int) -> ScenarioSpec:
    """Slow lead plus an oncoming stream: passing needs a timed gap."""
    lead = AgentSpec(
        name="lead",
        waypoints=np.array([[24.0 + rng.uniform(-2.0, 2.0), 0.0], [400.0, 0.0]]),
        speeds=np.array([1.5 * rng.uniform(0.9, 1.1)]),
    )
    agents = [lead]
    base = np.array([60.0, 145.0, 230.0, 315.0])
    for i, xb in enumerate(base):
        x0 = float(xb + rng.uniform(-6.0, 6.0))
        v = 7.5 * rng.uniform(0.92, 1.08)
        agents.append(AgentSpec(
            name=f"oncoming_{i}", waypoints=np.array([[x0, 4.0], [-100.0, 4.0]]),
            speeds=np.array([v]),
        ))
    return ScenarioSpec(name="multi_vehicle", seed=seed, duration=34.0,
                        ego=_ego_start(rng), route_points=_straight_route(140.0),
                        v_ref=8.0, agents=agents, statics=_barriers())


def make_scenario(name: str, seed: int) -> ScenarioSpec:
    if name not in SCENARIO_NAMES:
        raise ValueError(f"unknown scenario name {name!r}")
    rng = rng_for(seed, "scenario", name)
    if name == "overtake":
        return _overtake(rng, seed)
    if name == "opposite":
        return _opposite(rng, seed)
    if name == "side_cutoff_left":
        return _side_cutoff(rng, seed, "left")
    if name == "side_cutoff_right":
        return _side_cutoff(rng, seed, "right")
    if name == "rear_passby":
        return _rear_passby(rng, seed)
    return _multi_vehicle(rng, seed)


def build_world(spec: ScenarioSpec, params: VehicleParams) -> World:
    route = Route(points=spec.route_points, v_ref=spec.v_ref)
    return World(params=params, ego=spec.ego, route=route,
                 agents=[Agent(a) for a in spec.agents],
                 statics=list(spec.statics), bounds=spec.bounds)


def _agent_to_dict(a: AgentSpec) -> dict:
    d = {
        "name": a.name,
        "waypoints": a.waypoints.tolist(),
        "speeds": a.speeds.tolist(),
        "length": a.length, "width": a.width, "height": a.height,
    }
    if a.accel is not None:
        d["accel"] = a.accel
    if a.trigger_distance is not None:
        d["trigger_distance"] = a.trigger_distance
        d["post_waypoints"] = a.post_waypoints.tolist()
        d["post_speeds"] = a.post_speeds.tolist()
        if a.post_accel is not None:
            d["post_accel"] = a.post_accel
    return d


def to_yaml(spec: ScenarioSpec) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": spec.name,
        "seed": spec.seed,
        "duration": spec.duration,
        "ego": {"x": spec.ego.x, "y": spec.ego.y, "v": spec.ego.v,
                "phi": spec.ego.phi},
        "route": {"v_ref": spec.v_ref, "points": spec.route_points.tolist()},
        "bounds": list(spec.bounds),
        "agents": [_agent_to_dict(a) for a in spec.agents],
        "statics": [{"height": s.height, "points": s.points.tolist()}
                    for s in spec.statics],
    }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)


def _key_line(text: str, key: str) -> int:
    for i, line in enumerate(text.splitlines(), start=1):
        if line.strip().startswith(key):
            return i
    return 1


def _require(doc: dict, key: str, text: str):
    if key not in doc:
        raise ScenarioParseError(f"missing required key {key!r}",
                                 _key_line(text, "schema_version"))
    return doc[key]


def from_yaml(text: str) -> ScenarioSpec:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        line = 1
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            line = mark.line + 1
        raise ScenarioParseError(f"invalid YAML: {exc}", line) from exc
    if not isinstance(doc, dict):
        raise ScenarioParseError("scenario file must be a mapping", 1)
    version = _require(doc, "schema_version", text)
    if version != SCHEMA_VERSION:
        raise ScenarioParseError(
            f"unsupported schema_version {version!r}",
            _key_line(text, "schema_version"))
    try:
        ego = doc["ego"]
        route = doc["route"]
        agents = []
        for a in doc.get("agents", []):
            kwargs = dict(
                name=a["name"],
                waypoints=np.array(a["waypoints"], dtype=np.float64),
                speeds=np.array(a["speeds"], dtype=np.float64),
                length=float(a.get("length", 4.5)),
                width=float(a.get("width", 2.0)),
                height=float(a.get("height", 1.6)),
                accel=a.get("accel"),
            )
            if "trigger_distance" in a:
                kwargs.update(
                    trigger_distance=float(a["trigger_distance"]),
                    post_waypoints=np.array(a["post_waypoints"], dtype=np.float64),
                    post_speeds=np.array(a["post_speeds"], dtype=np.float64),
                    post_accel=a.get("post_accel"),
                )
            agents.append(AgentSpec(**kwargs))
        statics = [StaticObstacle(points=np.array(s["points"], dtype=np.float64),
                                  height=float(s.get("height", 2.0)))
                   for s in doc.get("statics", [])]
        return ScenarioSpec(
            name=_require(doc, "name", text),
            seed=int(doc.get("seed", 0)),
            duration=float(_require(doc, "duration", text)),
            ego=VehicleState(x=float(ego["x"]), y=float(ego["y"]),
                             v=float(ego["v"]), phi=float(ego["phi"]), t=0.0),
            route_points=np.array(route["points"], dtype=np.float64),
            v_ref=float(route["v_ref"]),
            agents=agents, statics=statics,
            bounds=tuple(doc.get("bounds", (-50.0, 400.0, -60.0, 60.0))),
        )
    except ScenarioParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        key = exc.args[0] if isinstance(exc, KeyError) else ""
        raise ScenarioParseError(
            f"bad scenario field: {exc}",
            _key_line(text, str(key)) if key else 1) from exc
