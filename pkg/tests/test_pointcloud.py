"""Filter / octree / projection tests against brute-force predicate oracles."""
from __future__ import annotations

import math
import time

import numpy as np
import pytest

from gridpilot.pointcloud import (FilterConfig, GridConfig, OutOfBoundsError,
                                  PointCloud, build_octree, filter_distance,
                                  filter_fov, filter_height, preprocess,
                                  project_to_grid)

CFG = FilterConfig()
GRID = GridConfig()


def _random_cloud(rng, n=300, spread=60.0):
    pts = np.stack([
        rng.uniform(-spread, spread, n),
        rng.uniform(-spread, spread, n),
        rng.uniform(-0.5, 2.5, n),
    ], axis=1)
    return PointCloud(pts)


def _oracle_keep(p, cfg):
    """Plain-python re-statement of all three predicates."""
    d = math.sqrt(p[0] ** 2 + p[1] ** 2 + p[2] ** 2)
    if d >= cfg.d_max:
        return False
    if not (cfg.z_low <= p[2] <= cfg.z_high):
        return False
    bearing = math.atan2(p[1], p[0])
    front = abs(bearing) <= cfg.fov_half_angle
    rear = abs(bearing) >= math.pi - cfg.fov_half_angle
    return front or rear


def test_filters_match_bruteforce_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        cloud = _random_cloud(rng)
        out = filter_fov(filter_height(filter_distance(cloud, CFG), CFG), CFG)
        expected = np.array([p for p in cloud.points if _oracle_keep(p, CFG)])
        expected = expected.reshape(-1, 3)
        np.testing.assert_array_equal(out.points, expected)


def test_distance_boundary_strict():
    cloud = PointCloud(np.array([[49.999, 0, 0.0], [50.0, 0, 0.0], [50.001, 0, 0.0]]))
    out = filter_distance(cloud, CFG)
    assert len(out) == 1 and out.points[0, 0] == 49.999


def test_height_band_inclusive():
    cloud = PointCloud(np.array([
        [1, 0, 0.24], [1, 0, 0.25], [1, 0, 1.0], [1, 0, 1.8], [1, 0, 1.81],
    ]))
    out = filter_height(cloud, CFG)
    np.testing.assert_allclose(out.points[:, 2], [0.25, 1.0, 1.8])


def test_fov_two_lobes():
    def at(bearing_deg, r=10.0):
        b = math.radians(bearing_deg)
        return [r * math.cos(b), r * math.sin(b), 1.0]

    cloud = PointCloud(np.array([at(0), at(79.9), at(80.0), at(81.0), at(90.0),
                                 at(99.0), at(100.0), at(170.0), at(180.0),
                                 at(-90.0), at(-120.0)]))
    out = filter_fov(cloud, CFG)
    kept = {round(math.degrees(math.atan2(p[1], p[0]))) for p in out.points}
    assert kept == {0, 80, 100, 170, 180, -120}


def test_filters_commute_and_idempotent():
    rng = np.random.default_rng(1)
    cloud = _random_cloud(rng)
    fns = [filter_distance, filter_height, filter_fov]

    def run(order):
        c = cloud
        for f in order:
            c = f(c, CFG)
        return c.points

    import itertools
    base = run(fns)
    for order in itertools.permutations(fns):
        got = run(order)
        assert got.shape == base.shape
        np.testing.assert_array_equal(np.sort(got, axis=0), np.sort(base, axis=0))
    once = filter_distance(cloud, CFG)
    twice = filter_distance(once, CFG)
    np.testing.assert_array_equal(once.points, twice.points)


def test_octree_leaves_match_voxel_oracle():
    rng = np.random.default_rng(2)
    pts = rng.uniform(-40, 40, (500, 3))
    tree = build_octree(PointCloud(pts), resolution=0.25, half_extent=128.0)
    oracle = set()
    for p in pts:
        oracle.add(tuple(int(math.floor((c + 128.0) / 0.25)) for c in p))
    got = {tuple(row) for row in tree.leaf_indices}
    assert got == oracle
    assert tree.depth == 10


def test_octree_one_point_per_octant():
    pts = np.array([[sx * 0.5, sy * 0.5, sz * 0.5]
                    for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    tree = build_octree(PointCloud(pts), resolution=1.0, half_extent=1.0)
    assert tree.depth == 1
    assert tree.n_occupied == 8


def test_octree_duplicate_voxels_collapse():
    pts = np.array([[1.0, 1.0, 1.0], [1.1, 1.05, 1.02], [3.0, 0.0, 0.5]])
    tree = build_octree(PointCloud(pts), resolution=0.25, half_extent=128.0)
    assert tree.n_occupied == 2


def test_octree_out_of_bounds_raises():
    with pytest.raises(OutOfBoundsError):
        build_octree(PointCloud(np.array([[130.0, 0, 0]])), 0.25, 128.0)


def test_projection_single_leaf_ahead():
    tree = build_octree(PointCloud(np.array([[10.0, 0.0, 1.0]])), 0.25, 128.0)
    grid = project_to_grid(tree, GRID)
    cells = grid.occupied_cells()
    assert cells.shape == (1, 2)
    row, col = cells[0]
    assert row == GRID.height // 2
    assert col == GRID.width // 2 + 20


def test_projection_collapses_z_column():
    pts = np.array([[4.0, -3.0, z] for z in (0.3, 0.8, 1.3)])
    tree = build_octree(PointCloud(pts), 0.25, 128.0)
    grid = project_to_grid(tree, GRID)
    assert grid.occupied_cells().shape == (1, 2)


def test_projection_matches_floor_oracle():
    rng = np.random.default_rng(3)
    pts = np.stack([rng.uniform(-49, 49, 400), rng.uniform(-49, 49, 400),
                    rng.uniform(0.3, 1.7, 400)], axis=1)
    tree = build_octree(PointCloud(pts), 0.25, 128.0)
    grid = project_to_grid(tree, GRID)
    oracle = set()
    for p in pts:
        # quantize to the leaf center first, then to the coarser grid cell
        lx = (math.floor((p[0] + 128.0) / 0.25) + 0.5) * 0.25 - 128.0
        ly = (math.floor((p[1] + 128.0) / 0.25) + 0.5) * 0.25 - 128.0
        col = math.floor(lx / 0.5) + 100
        row = math.floor(ly / 0.5) + 100
        oracle.add((row, col))
    got = {tuple(c) for c in grid.occupied_cells()}
    assert got == oracle


def test_grid_values_binary_at_capture():
    rng = np.random.default_rng(4)
    cloud = _random_cloud(rng)
    grid = preprocess(cloud, CFG, GRID)
    assert set(np.unique(grid.data)).issubset({0.0, 1.0})


def test_preprocess_equals_staged_composition():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        cloud = _random_cloud(rng, n=60)
        fused = preprocess(cloud, CFG, GRID)
        staged = project_to_grid(
            build_octree(
                filter_fov(filter_height(filter_distance(cloud, CFG), CFG), CFG),
                0.25, 128.0),
            GRID)
        np.testing.assert_array_equal(fused.data, staged.data)


def test_fewer_points_never_add_cells():
    rng = np.random.default_rng(6)
    cloud = _random_cloud(rng)
    full = preprocess(cloud, CFG, GRID)
    sub = PointCloud(cloud.points[::3])
    sparse = preprocess(sub, CFG, GRID)
    assert np.all(full.data >= sparse.data)


def test_preprocess_budget_100k_points():
    rng = np.random.default_rng(7)
    pts = np.stack([rng.uniform(-60, 60, 100_000), rng.uniform(-60, 60, 100_000),
                    rng.uniform(-0.5, 2.5, 100_000)], axis=1)
    cloud = PointCloud(pts)
    preprocess(cloud, CFG, GRID)  # warm caches
    t0 = time.perf_counter()
    preprocess(cloud, CFG, GRID)
    assert time.perf_counter() - t0 < 0.1
