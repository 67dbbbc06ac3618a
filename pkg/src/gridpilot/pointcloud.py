"""Point cloud reduction: filters -> octree voxelization -> top-view occupancy grid.

All clouds are in the ego frame: x forward, y left, z up, origin at the
sensor. The staged ops are pure predicates plus a re-quantization, so they
commute and are idempotent; preprocess() is the fused one-call path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class OutOfBoundsError(ValueError):
    """A point lies outside the octree root cube."""


@dataclass(frozen=True)
class FilterConfig:
    d_max: float = 50.0                      # m, strict upper bound on range
    z_low: float = 0.25                      # m, road returns live below this
    z_high: float = 1.8                      # m, ego height; taller returns ignored
    fov_half_angle: float = math.radians(80.0)  # per lobe, front and rear


@dataclass(frozen=True)
class GridConfig:
    resolution: float = 0.5   # m per cell
    height: int = 200         # rows, y axis (left positive)
    width: int = 200          # cols, x axis (forward positive)


@dataclass
class PointCloud:
    """(N, 3) float64 points in the ego frame."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"expected (N, 3) points, got {pts.shape}")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]


def filter_distance(cloud: PointCloud, cfg: FilterConfig) -> PointCloud:
    """Keep points with Euclidean range strictly below d_max."""
    d2 = np.einsum("ij,ij->i", cloud.points, cloud.points)
    return PointCloud(cloud.points[d2 < cfg.d_max * cfg.d_max])


def filter_height(cloud: PointCloud, cfg: FilterConfig) -> PointCloud:
    """Keep points inside the vertical band [z_low, z_high] (inclusive)."""
    z = cloud.points[:, 2]
    return PointCloud(cloud.points[(z >= cfg.z_low) & (z <= cfg.z_high)])


def filter_fov(cloud: PointCloud, cfg: FilterConfig) -> PointCloud:
    """Keep points inside the front or rear horizontal lobe.

    Each lobe spans +-fov_half_angle around the forward (+x) or rearward
    (-x) axis, the two 160 degree wedges the stack actually consumes.
    """
    bearing = np.arctan2(cloud.points[:, 1], cloud.points[:, 0])
    front = np.abs(bearing) <= cfg.fov_half_angle
    rear = np.abs(bearing) >= math.pi - cfg.fov_half_angle
    return PointCloud(cloud.points[front | rear])


@dataclass
class OcTree:
    """Fixed-depth octree over a cube centered on the ego.

    Only the occupied leaf set matters downstream, so the tree is stored
    as the sorted unique voxel indices at leaf resolution; depth follows
    from the cube size and the leaf edge length.
    """

    resolution: float
    half_extent: float
    depth: int
    leaf_indices: np.ndarray  # (M, 3) int64, unique, lexicographically sorted

    @property
    def n_occupied(self) -> int:
        return self.leaf_indices.shape[0]

    def leaf_centers(self) -> np.ndarray:
        """(M, 3) world-of-the-tree (ego frame) leaf center coordinates."""
        return (self.leaf_indices + 0.5) * self.resolution - self.half_extent


def build_octree(cloud: PointCloud, resolution: float = 0.25,
                 half_extent: float = 128.0) -> OcTree:
    """Voxelize a cloud; raises OutOfBoundsError for points outside the cube."""
    cells_per_edge = 2.0 * half_extent / resolution
    depth = int(round(math.log2(cells_per_edge)))
    if abs(cells_per_edge - 2.0 ** depth) > 1e-9:
        raise ValueError(
            f"cube edge {2 * half_extent} must be a power-of-two multiple of resolution {resolution}"
        )
    pts = cloud.points
    if np.any(np.abs(pts) >= half_extent):
        bad = pts[np.any(np.abs(pts) >= half_extent, axis=1)][0]
        raise OutOfBoundsError(f"point {bad} outside root cube of half extent {half_extent}")
    if len(cloud) == 0:
        return OcTree(resolution, half_extent, depth,
                      np.empty((0, 3), dtype=np.int64))
    idx = np.floor((pts + half_extent) / resolution).astype(np.int64)
    # pack the three axes into one integer so unique() runs on a flat array
    n = 1 << depth
    packed = (idx[:, 0] * n + idx[:, 1]) * n + idx[:, 2]
    packed = np.unique(packed)
    unpacked = np.empty((packed.shape[0], 3), dtype=np.int64)
    unpacked[:, 2] = packed % n
    rest = packed // n
    unpacked[:, 1] = rest % n
    unpacked[:, 0] = rest // n
    return OcTree(resolution, half_extent, depth, unpacked)


@dataclass
class OccupancyGrid:
    """Ego-centered top view. data[row, col] with row along +y (left) and
    col along +x (forward); the ego sits in cell (height//2, width//2).

    Values live in [0, 1]: binary at capture, graded for predictions.
    ego_pose is the world pose (x, y, phi) the grid was captured or
    predicted at, which is what lets consumers mix grids from different
    frames.
    """

    data: np.ndarray          # (H, W) float32
    resolution: float
    ego_pose: tuple[float, float, float]
    frame_index: int = 0
    t: float = 0.0
    _world_cache: object = field(default=None, repr=False, compare=False)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def occupied_cells(self, threshold: float = 0.5) -> np.ndarray:
        """(M, 2) int array of (row, col) with occupancy > threshold."""
        rows, cols = np.nonzero(self.data > threshold)
        return np.stack([rows, cols], axis=1)

    def cell_centers_ego(self, threshold: float = 0.5) -> np.ndarray:
        """(M, 2) ego-frame x, y centers of occupied cells."""
        cells = self.occupied_cells(threshold)
        x = (cells[:, 1] - self.width // 2 + 0.5) * self.resolution
        y = (cells[:, 0] - self.height // 2 + 0.5) * self.resolution
        return np.stack([x, y], axis=1)

    def cell_centers_world(self, threshold: float = 0.5) -> np.ndarray:
        """Occupied cell centers rotated/translated into the world frame."""
        ego = self.cell_centers_ego(threshold)
        ex, ey, ephi = self.ego_pose
        c, s = math.cos(ephi), math.sin(ephi)
        x = ex + ego[:, 0] * c - ego[:, 1] * s
        y = ey + ego[:, 0] * s + ego[:, 1] * c
        return np.stack([x, y], axis=1)

    def world_to_cells(self, pts_world: np.ndarray) -> np.ndarray:
        """(M, 2) world points -> (row, col) ints in this grid's frame."""
        ex, ey, ephi = self.ego_pose
        c, s = math.cos(ephi), math.sin(ephi)
        dx = pts_world[:, 0] - ex
        dy = pts_world[:, 1] - ey
        x_ego = dx * c + dy * s
        y_ego = -dx * s + dy * c
        col = np.floor(x_ego / self.resolution).astype(np.int64) + self.width // 2
        row = np.floor(y_ego / self.resolution).astype(np.int64) + self.height // 2
        return np.stack([row, col], axis=1)


def ego_to_cells(xy_ego: np.ndarray, cfg: GridConfig) -> np.ndarray:
    """Ego-frame (x, y) points to (row, col) indices under the floor convention."""
    col = np.floor(xy_ego[:, 0] / cfg.resolution).astype(np.int64) + cfg.width // 2
    row = np.floor(xy_ego[:, 1] / cfg.resolution).astype(np.int64) + cfg.height // 2
    return np.stack([row, col], axis=1)


def project_to_grid(tree: OcTree, cfg: GridConfig,
                    ego_pose: tuple[float, float, float] = (0.0, 0.0, 0.0),
                    frame_index: int = 0, t: float = 0.0) -> OccupancyGrid:
    """Project occupied leaves down to a binary top-view grid.

    Leaves collapsing onto the same column/row mark the cell once; leaves
    outside the grid span are dropped.
    """
    data = np.zeros((cfg.height, cfg.width), dtype=np.float32)
    if tree.n_occupied:
        centers = tree.leaf_centers()
        cells = ego_to_cells(centers[:, :2], cfg)
        ok = ((cells[:, 0] >= 0) & (cells[:, 0] < cfg.height)
              & (cells[:, 1] >= 0) & (cells[:, 1] < cfg.width))
        cells = cells[ok]
        data[cells[:, 0], cells[:, 1]] = 1.0
    return OccupancyGrid(data=data, resolution=cfg.resolution, ego_pose=ego_pose,
                         frame_index=frame_index, t=t)


def preprocess(cloud: PointCloud, filter_cfg: FilterConfig, grid_cfg: GridConfig,
               ego_pose: tuple[float, float, float] = (0.0, 0.0, 0.0),
               frame_index: int = 0, t: float = 0.0,
               tree_resolution: float = 0.25,
               tree_half_extent: float = 128.0) -> OccupancyGrid:
    """Fused capture path: filters, octree, projection, in one call."""
    filtered = filter_fov(filter_height(filter_distance(cloud, filter_cfg), filter_cfg),
                          filter_cfg)
    tree = build_octree(filtered, resolution=tree_resolution, half_extent=tree_half_extent)
    return project_to_grid(tree, grid_cfg, ego_pose=ego_pose,
                           frame_index=frame_index, t=t)


__all__ = [
    "FilterConfig",
    "GridConfig",
    "PointCloud",
    "OcTree",
    "OccupancyGrid",
    "OutOfBoundsError",
    "filter_distance",
    "filter_height",
    "filter_fov",
    "build_octree",
    "project_to_grid",
    "preprocess",
    "ego_to_cells",
]
