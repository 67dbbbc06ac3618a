"""Closed-form constant-velocity predictor.

Clusters the latest grid, estimates each cluster's world-frame velocity by
matching centroids against the previous grid, then advects the occupied
cells forward while re-centering every future frame on the dead-reckoned
ego pose. Exact on static scenes with a static ego.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from ..core import VehicleParams, VehicleState
from ..pointcloud import OccupancyGrid
from ..planner import PredictionBundle

MATCH_GATE = 15.0          # m, max centroid travel between frames
MIN_MATCH_CELLS = 3        # clusters smaller than this never earn a velocity
MAX_MOBILE_SPAN = 12.0     # m, longer clusters are walls seen through a moving window
V_STATIC = 1.0             # m/s, slower apparent motion is visibility jitter, not travel
_STRUCTURE = np.ones((3, 3), dtype=int)


def _clusters(grid: OccupancyGrid, threshold: float = 0.5):
    """Per-cluster world-frame cell centers and centroids.

    Labels run on a one-step dilation of the mask so that sparse lidar
    sampling (a grazed corner cell, a wall hit every other cell) does not
    shatter one surface into many single-cell clusters.
    """
    mask = grid.data > threshold
    labels, n = ndimage.label(
        ndimage.binary_dilation(mask, structure=_STRUCTURE), structure=_STRUCTURE)
    if n == 0:
        return [], np.empty((0, 2))
    rows, cols = np.nonzero(mask)
    ids = labels[rows, cols]
    x_ego = (cols - grid.width // 2 + 0.5) * grid.resolution
    y_ego = (rows - grid.height // 2 + 0.5) * grid.resolution
    ex, ey, ephi = grid.ego_pose
    c, s = math.cos(ephi), math.sin(ephi)
    xw = ex + x_ego * c - y_ego * s
    yw = ey + x_ego * s + y_ego * c
    pts = np.stack([xw, yw], axis=1)
    groups = [pts[ids == k] for k in range(1, n + 1)]
    groups = [g for g in groups if g.shape[0]]
    centroids = np.array([g.mean(axis=0) for g in groups]).reshape(len(groups), 2)
    return groups, centroids


def _dead_reckon(ego: VehicleState, dt: float) -> tuple[float, float, float]:
    return (ego.x + ego.v * math.cos(ego.phi) * dt,
            ego.y + ego.v * math.sin(ego.phi) * dt,
            ego.phi)


def oracle_predict(history: list[OccupancyGrid], ego: VehicleState,
                   tau_o: int, params: VehicleParams,
                   match_gate: float = MATCH_GATE) -> PredictionBundle:
    """Advect the latest grid's clusters for tau_o future frames.

    history holds at least one grid, oldest first; velocities come from the
    last two. Clusters with no match within the gate (or only one frame of
    history) are treated as static, as are tiny clusters (too little
    evidence), very long ones (a wall's visible stretch travels with the
    ego, which would read as motion), and ones whose apparent speed sits
    below a deadband (a parked body's visible face shifts as viewpoints
    change, which would read as creep).
    """
    if not history:
        raise ValueError("oracle_predict needs at least one history grid")
    latest = history[-1]
    groups, cents = _clusters(latest)
    vels = np.zeros((len(groups), 2))
    if len(history) >= 2 and len(groups):
        prev = history[-2]
        dt = latest.t - prev.t
        prev_groups, prev_cents = _clusters(prev)
        big = [j for j, g in enumerate(prev_groups) if g.shape[0] >= MIN_MATCH_CELLS]
        if big and dt > 1e-9:
            prev_cents = prev_cents[big]
            diff = cents[:, None, :] - prev_cents[None, :, :]
            d2 = np.einsum("ijk,ijk->ij", diff, diff)
            nearest = np.argmin(d2, axis=1)
            dist = np.sqrt(d2[np.arange(len(groups)), nearest])
            ok = dist <= match_gate
            for i, g in enumerate(groups):
                span = float(max(np.ptp(g[:, 0]), np.ptp(g[:, 1]))) if g.shape[0] > 1 else 0.0
                if g.shape[0] < MIN_MATCH_CELLS or span > MAX_MOBILE_SPAN:
                    ok[i] = False
            vels[ok] = (cents[ok] - prev_cents[nearest[ok]]) / dt
            # a parked body's centroid drifts as the lidar reveals new faces;
            # sub-deadband speeds are that jitter, not travel
            slow = np.hypot(vels[:, 0], vels[:, 1]) < V_STATIC
            vels[slow] = 0.0
    grids = []
    shape = latest.data.shape
    for k in range(1, tau_o + 1):
        dt_k = k * params.dt_frame
        pose = _dead_reckon(ego, dt_k)
        data = np.zeros(shape, dtype=np.float32)
        out = OccupancyGrid(data=data, resolution=latest.resolution,
                            ego_pose=pose, frame_index=latest.frame_index + k,
                            t=latest.t + dt_k)
        for g, v in zip(groups, vels):
            moved = g + v * dt_k
            cells = out.world_to_cells(moved)
            keep = ((cells[:, 0] >= 0) & (cells[:, 0] < shape[0])
                    & (cells[:, 1] >= 0) & (cells[:, 1] < shape[1]))
            cells = cells[keep]
            data[cells[:, 0], cells[:, 1]] = 1.0
        grids.append(out)
    return PredictionBundle(grids=grids, source="oracle")
