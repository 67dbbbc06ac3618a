"""Planar multi-ring lidar over the scripted world.

720 azimuth beams per ring, four rings at fixed heights. Beams run
horizontally from the ego position; a ring sees a surface when the surface
is at least ring-height tall. Misses synthesize a ground-clutter return at
z = 0.05 just inside max range, which the height filter later removes.
"""
from __future__ import annotations

import math

import numpy as np

from ..core import VehicleState
from ..pointcloud import PointCloud
from .world import World

N_BEAMS = 720
RING_HEIGHTS = tuple(np.linspace(0.1, 1.8, 4))
MAX_RANGE = 50.0
GROUND_RANGE_FACTOR = 0.999
GROUND_Z = 0.05


def _world_segments(world: World) -> tuple[np.ndarray, np.ndarray]:
    """All obstacle edges as (S, 4) [x1 y1 x2 y2] plus their heights (S,)."""
    segs = []
    heights = []
    for agent in world.agents:
        c = agent.corners()
        for i in range(4):
            j = (i + 1) % 4
            segs.append([c[i, 0], c[i, 1], c[j, 0], c[j, 1]])
            heights.append(agent.spec.height)
    for obs in world.statics:
        pts = obs.points
        for i in range(len(pts)):
            j = (i + 1) % len(pts)
            segs.append([pts[i, 0], pts[i, 1], pts[j, 0], pts[j, 1]])
            heights.append(obs.height)
    if not segs:
        return np.empty((0, 4)), np.empty((0,))
    return np.array(segs), np.array(heights)


def _ray_segment_t(origin: np.ndarray, dirs: np.ndarray,
                   segs: np.ndarray) -> np.ndarray:
    """(B, S) ray parameter of each beam/segment intersection, inf if none."""
    B = dirs.shape[0]
    S = segs.shape[0]
    if S == 0:
        return np.full((B, 0), np.inf)
    p = segs[:, 0:2]
    r = segs[:, 2:4] - p
    # solve origin + t*d = p + u*r for t >= 0, 0 <= u <= 1
    dx = dirs[:, 0][:, None]
    dy = dirs[:, 1][:, None]
    rx = r[:, 0][None, :]
    ry = r[:, 1][None, :]
    denom = dx * ry - dy * rx
    qx = (p[:, 0] - origin[0])[None, :]
    qy = (p[:, 1] - origin[1])[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qx * ry - qy * rx) / denom
        u = (qx * dy - qy * dx) / denom
    bad = (np.abs(denom) < 1e-12) | (t < 1e-9) | (u < 0.0) | (u > 1.0)
    t = np.where(bad, np.inf, t)
    return t


def lidar_scan(world: World, n_beams: int = N_BEAMS,
               ring_heights: tuple = RING_HEIGHTS,
               max_range: float = MAX_RANGE) -> PointCloud:
    """Scan from the current ego pose; returns points in the ego frame."""
    ego = world.ego
    az_ego = np.arange(n_beams) * (2.0 * math.pi / n_beams)
    az_world = az_ego + ego.phi
    dirs = np.stack([np.cos(az_world), np.sin(az_world)], axis=1)
    segs, heights = _world_segments(world)
    t_all = _ray_segment_t(np.array([ego.x, ego.y]), dirs, segs)
    cos_e = np.cos(az_ego)
    sin_e = np.sin(az_ego)
    points = np.empty((n_beams * len(ring_heights), 3))
    k = 0
    for h in ring_heights:
        if segs.shape[0]:
            visible = heights >= h
            t_ring = np.where(visible[None, :], t_all, np.inf)
            t_hit = t_ring.min(axis=1)
        else:
            t_hit = np.full(n_beams, np.inf)
        hit = t_hit <= max_range
        r = np.where(hit, t_hit, max_range * GROUND_RANGE_FACTOR)
        z = np.where(hit, h, GROUND_Z)
        points[k:k + n_beams, 0] = r * cos_e
        points[k:k + n_beams, 1] = r * sin_e
        points[k:k + n_beams, 2] = z
        k += n_beams
    return PointCloud(points)


def scan_pose(state: VehicleState) -> tuple[float, float, float]:
    return (state.x, state.y, state.phi)
