"""gridpilot: closed-loop driving stack that plans against predicted
occupancy grids and tracks the plan with NMPC."""

__version__ = "0.1.0"

from .core import (ControlCommand, StateTrajectory, VehicleParams, VehicleState,
                   rollout, step_dynamics, wrap_angle)
from .pointcloud import (FilterConfig, GridConfig, OccupancyGrid, PointCloud,
                         build_octree, preprocess, project_to_grid)

__all__ = [
    "ControlCommand",
    "StateTrajectory",
    "VehicleParams",
    "VehicleState",
    "rollout",
    "step_dynamics",
    "wrap_angle",
    "FilterConfig",
    "GridConfig",
    "OccupancyGrid",
    "PointCloud",
    "build_octree",
    "preprocess",
    "project_to_grid",
]
