"""Recorded-drive datasets: binary occupancy frames with ego states and the
reference route, RLE-compressed, in a versioned binary container (magic
"OBSD"). Also the grid warping helpers shared by training and inference.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import VehicleState, wrap_angle
from .util import atomic_write_bytes

MAGIC = b"OBSD"
VERSION = 1


class DatasetFormatError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    pass


@dataclass
class FrameRecord:
    state: VehicleState
    route_points: np.ndarray   # (n, 2) world-frame reference polyline
    grid: np.ndarray           # (H, W) uint8 binary occupancy, ego frame

    def __post_init__(self) -> None:
        self.route_points = np.asarray(self.route_points, dtype=np.float64)
        self.grid = np.asarray(self.grid, dtype=np.uint8)


@dataclass
class DatasetFile:
    resolution: float
    dt_frame: float
    tau_i: int
    tau_o: int
    records: list[FrameRecord]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.records[0].grid.shape


def rle_encode(flat: np.ndarray) -> list[tuple[int, int]]:
    """Run-length encode a 1-D uint8 array as (count, value) pairs."""
    flat = np.asarray(flat, dtype=np.uint8).ravel()
    if flat.size == 0:
        return []
    edges = np.nonzero(np.diff(flat))[0] + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [flat.size]])
    runs = []
    for s, e in zip(starts, ends):
        n = int(e - s)
        v = int(flat[s])
        while n > 65535:
            runs.append((65535, v))
            n -= 65535
        runs.append((n, v))
    return runs


def rle_decode(runs: list[tuple[int, int]], size: int) -> np.ndarray:
    if not runs:
        if size:
            raise DatasetFormatError("empty run list for nonzero size")
        return np.zeros(0, dtype=np.uint8)
    counts = np.array([r[0] for r in runs], dtype=np.int64)
    values = np.array([r[1] for r in runs], dtype=np.uint8)
    total = int(counts.sum())
    if total != size:
        raise DatasetFormatError(f"run lengths sum to {total}, expected {size}")
    return np.repeat(values, counts)


def write_dataset(path: str | Path, ds: DatasetFile) -> None:
    if not ds.records:
        raise EmptyDatasetError("refusing to write a dataset with no frames")
    H, W = ds.grid_shape
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<IIdd", H, W, ds.resolution, ds.dt_frame))
    buf.write(struct.pack("<II", ds.tau_i, ds.tau_o))
    buf.write(struct.pack("<I", len(ds.records)))
    for rec in ds.records:
        if rec.grid.shape != (H, W):
            raise DatasetFormatError("inconsistent grid shapes in dataset")
        s = rec.state
        buf.write(struct.pack("<5d", s.x, s.y, s.v, s.phi, s.t))
        buf.write(struct.pack("<I", rec.route_points.shape[0]))
        buf.write(rec.route_points.astype("<f8").tobytes())
        runs = rle_encode(rec.grid)
        buf.write(struct.pack("<I", len(runs)))
        for n, v in runs:
            buf.write(struct.pack("<HB", n, v))
    atomic_write_bytes(Path(path), buf.getvalue())


def _read(buf, n: int) -> bytes:
    b = buf.read(n)
    if len(b) != n:
        raise DatasetFormatError("truncated dataset file")
    return b


def read_dataset(path: str | Path) -> DatasetFile:
    with open(path, "rb") as fh:
        buf = io.BytesIO(fh.read())
    if _read(buf, 4) != MAGIC:
        raise DatasetFormatError("bad magic; not a dataset file")
    (version,) = struct.unpack("<I", _read(buf, 4))
    if version != VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    H, W, resolution, dt_frame = struct.unpack("<IIdd", _read(buf, 24))
    tau_i, tau_o = struct.unpack("<II", _read(buf, 8))
    (count,) = struct.unpack("<I", _read(buf, 4))
    if count == 0:
        raise EmptyDatasetError(f"{path}: dataset holds no frames")
    records = []
    for _ in range(count):
        x, y, v, phi, t = struct.unpack("<5d", _read(buf, 40))
        (n_route,) = struct.unpack("<I", _read(buf, 4))
        route = np.frombuffer(_read(buf, 16 * n_route), dtype="<f8")
        route = route.reshape(n_route, 2).copy()
        (n_runs,) = struct.unpack("<I", _read(buf, 4))
        runs = [struct.unpack("<HB", _read(buf, 3)) for _ in range(n_runs)]
        grid = rle_decode(runs, H * W).reshape(H, W)
        records.append(FrameRecord(
            state=VehicleState(x=x, y=y, v=v, phi=phi, t=t),
            route_points=route, grid=grid))
    return DatasetFile(resolution=resolution, dt_frame=dt_frame,
                       tau_i=tau_i, tau_o=tau_o, records=records)


def downsample_grid(grid: np.ndarray, factor: int = 2) -> np.ndarray:
    """Max-pool a binary grid by an integer factor."""
    H, W = grid.shape
    if H % factor or W % factor:
        raise ValueError(f"grid {grid.shape} not divisible by {factor}")
    view = grid.reshape(H // factor, factor, W // factor, factor)
    return view.max(axis=(1, 3))


def _world_of_cells(grid: np.ndarray, pose, resolution: float) -> np.ndarray:
    rows, cols = np.nonzero(grid)
    H, W = grid.shape
    x_e = (cols - W // 2 + 0.5) * resolution
    y_e = (rows - H // 2 + 0.5) * resolution
    ex, ey, ephi = pose
    c, s = math.cos(ephi), math.sin(ephi)
    return np.stack([ex + x_e * c - y_e * s, ey + x_e * s + y_e * c], axis=1)


def _cells_of_world(pts: np.ndarray, pose, shape, resolution: float) -> np.ndarray:
    ex, ey, ephi = pose
    c, s = math.cos(ephi), math.sin(ephi)
    dx = pts[:, 0] - ex
    dy = pts[:, 1] - ey
    x_e = dx * c + dy * s
    y_e = -dx * s + dy * c
    col = np.floor(x_e / resolution).astype(np.int64) + shape[1] // 2
    row = np.floor(y_e / resolution).astype(np.int64) + shape[0] // 2
    return np.stack([row, col], axis=1)


def stabilize_grid(grid: np.ndarray, src_pose, dst_pose,
                   resolution: float) -> np.ndarray:
    """Re-express a binary grid captured at src_pose in dst_pose's frame."""
    out = np.zeros_like(grid, dtype=np.float32)
    pts = _world_of_cells(grid, src_pose, resolution)
    if pts.shape[0] == 0:
        return out
    cells = _cells_of_world(pts, dst_pose, grid.shape, resolution)
    keep = ((cells[:, 0] >= 0) & (cells[:, 0] < grid.shape[0])
            & (cells[:, 1] >= 0) & (cells[:, 1] < grid.shape[1]))
    cells = cells[keep]
    out[cells[:, 0], cells[:, 1]] = 1.0
    return out


def raster_route(route_points: np.ndarray, pose, shape,
                 resolution: float) -> np.ndarray:
    """Mark cells under the reference polyline, sampled at half a cell."""
    out = np.zeros(shape, dtype=np.float32)
    pts = np.asarray(route_points, dtype=np.float64)
    if pts.shape[0] < 2:
        return out
    seg = np.diff(pts, axis=0)
    lens = np.linalg.norm(seg, axis=1)
    samples = [pts[0]]
    for a, d, ln in zip(pts[:-1], seg, lens):
        n = max(1, int(math.ceil(ln / (0.5 * resolution))))
        f = (np.arange(1, n + 1) / n)[:, None]
        samples.append(a + f * d)
    dense = np.vstack(samples)
    cells = _cells_of_world(dense, pose, shape, resolution)
    keep = ((cells[:, 0] >= 0) & (cells[:, 0] < shape[0])
            & (cells[:, 1] >= 0) & (cells[:, 1] < shape[1]))
    cells = cells[keep]
    out[cells[:, 0], cells[:, 1]] = 1.0
    return out


def yaw_rates(states: list[VehicleState], dt_frame: float) -> np.ndarray:
    """Per-frame heading rate from consecutive states; first frame gets 0."""
    if not states:
        return np.zeros(0)
    out = np.zeros(len(states))
    for i in range(1, len(states)):
        out[i] = wrap_angle(states[i].phi - states[i - 1].phi) / dt_frame
    return out
