from .world import (Agent, AgentSpec, StaticObstacle, World, check_collision,
                    rect_corners, rects_overlap, step_world)
from .lidar import RING_HEIGHTS, lidar_scan
from .scenarios import (SCENARIO_NAMES, ScenarioParseError, ScenarioSpec,
                        build_world, from_yaml, make_scenario, to_yaml)
from .runner import (PIPELINES, RunConfig, RunMetrics, first_evasive_tick,
                     record_drive, run_scenario, signed_offset)

__all__ = [
    "Agent",
    "AgentSpec",
    "StaticObstacle",
    "World",
    "check_collision",
    "rect_corners",
    "rects_overlap",
    "step_world",
    "lidar_scan",
    "RING_HEIGHTS",
    "SCENARIO_NAMES",
    "ScenarioSpec",
    "ScenarioParseError",
    "make_scenario",
    "build_world",
    "to_yaml",
    "from_yaml",
    "RunConfig",
    "RunMetrics",
    "run_scenario",
    "record_drive",
    "first_evasive_tick",
    "signed_offset",
    "PIPELINES",
]
