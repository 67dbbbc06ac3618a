"""Training loop: window recorded drives into stabilized samples, split by
drive, optimize with Adam, early-stop on validation loss.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch

from ..dataset import (FrameRecord, downsample_grid, raster_route,
                       stabilize_grid, yaw_rates)
from ..util import rng_for
from .model import ObserveNet, PredictorConfig, build_frames, loss


class TrainingError(RuntimeError):
    pass


@dataclass
class Sample:
    frames: np.ndarray   # (tau_i, C, H, W)
    target: np.ndarray   # (tau_o, H, W)


def _pose(state) -> tuple[float, float, float]:
    return (state.x, state.y, state.phi)


def _record_grid(rec: FrameRecord, cfg: PredictorConfig) -> np.ndarray:
    g = rec.grid.astype(np.float32)
    if g.shape[0] == cfg.grid_size:
        return g
    factor = g.shape[0] // cfg.grid_size
    if factor * cfg.grid_size != g.shape[0]:
        raise ValueError(
            f"record grid {g.shape} incompatible with model size {cfg.grid_size}")
    return downsample_grid(rec.grid, factor).astype(np.float32)


def make_sample(records: list[FrameRecord], anchor: int, cfg: PredictorConfig,
                dt_frame: float) -> Sample:
    """Build one stabilized sample with history ending at `anchor`."""
    lo = anchor - cfg.tau_i + 1
    hi = anchor + cfg.tau_o
    if lo < 0 or hi >= len(records):
        raise IndexError("window falls outside the drive")
    anchor_pose = _pose(records[anchor].state)
    hist = np.stack([
        stabilize_grid(_record_grid(records[i], cfg), _pose(records[i].state),
                       anchor_pose, cfg.resolution)
        for i in range(lo, anchor + 1)])
    states = [records[i].state for i in range(lo, anchor + 1)]
    v = np.array([s.v for s in states])
    prev = records[lo - 1].state if lo > 0 else None
    rates = yaw_rates(([prev] if prev is not None else []) + states, dt_frame)
    rates = rates[1:] if prev is not None else rates
    route = raster_route(records[anchor].route_points, anchor_pose,
                         hist.shape[1:], cfg.resolution)
    frames = build_frames(hist, v, rates, route)
    target = np.stack([
        stabilize_grid(_record_grid(records[i], cfg), _pose(records[i].state),
                       anchor_pose, cfg.resolution)
        for i in range(anchor + 1, anchor + 1 + cfg.tau_o)])
    return Sample(frames=frames, target=target)


def windowed_samples(drives: list[list[FrameRecord]], cfg: PredictorConfig,
                     dt_frame: float = 1.0) -> list[Sample]:
    out = []
    for records in drives:
        first = cfg.tau_i - 1
        last = len(records) - cfg.tau_o - 1
        for anchor in range(first, last + 1):
            out.append(make_sample(records, anchor, cfg, dt_frame))
    return out


def split_by_drive(drives: list, seed: int,
                   fractions: tuple = (0.8, 0.1, 0.1)) -> tuple[list, list, list]:
    """Shuffle drives with the seed, then cut 80/10/10; every split that the
    fractions allow gets at least one drive."""
    order = list(rng_for(seed, "split").permutation(len(drives)))
    n = len(drives)
    n_val = max(1, round(fractions[1] * n)) if n >= 3 else (1 if n >= 2 else 0)
    n_test = max(1, round(fractions[2] * n)) if n >= 3 else 0
    n_train = n - n_val - n_test
    tr = [drives[i] for i in order[:n_train]]
    va = [drives[i] for i in order[n_train:n_train + n_val]]
    te = [drives[i] for i in order[n_train + n_val:]]
    return tr, va, te


def _tensors(samples: list[Sample]) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.as_tensor(np.stack([s.frames for s in samples]))
    y = torch.as_tensor(np.stack([s.target for s in samples]))
    return x, y


def _eval_loss(model: ObserveNet, x: torch.Tensor, y: torch.Tensor,
               batch: int) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for i in range(0, x.shape[0], batch):
            xb, yb = x[i:i + batch], y[i:i + batch]
            total += loss(model(xb), yb).item() * xb.shape[0]
    return total / x.shape[0]


def train(model: ObserveNet, train_samples: list[Sample],
          val_samples: list[Sample], cfg: PredictorConfig, seed: int,
          ) -> tuple[ObserveNet, list[tuple[int, float, float]]]:
    """Adam optimization with early stop; returns the best-validation model
    and the (epoch, train_loss, val_loss) curve."""
    if not train_samples:
        raise TrainingError("no training samples")
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    x_tr, y_tr = _tensors(train_samples)
    x_va, y_va = _tensors(val_samples) if val_samples else (x_tr, y_tr)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    gen = torch.Generator().manual_seed(seed)
    curve = []
    best_val = float("inf")
    best_state = copy.deepcopy(model.state_dict())
    stale = 0
    for epoch in range(cfg.max_epochs):
        model.train()
        perm = torch.randperm(x_tr.shape[0], generator=gen)
        total = 0.0
        for i in range(0, len(perm), cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            opt.zero_grad()
            out = model(x_tr[idx])
            l = loss(out, y_tr[idx])
            if not torch.isfinite(l):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            l.backward()
            opt.step()
            total += l.item() * len(idx)
        train_loss = total / x_tr.shape[0]
        val_loss = _eval_loss(model, x_va, y_va, cfg.batch_size)
        curve.append((epoch, train_loss, val_loss))
        if val_loss < best_val - 1e-9:
            best_val = val_loss
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
        else:
            stale += 1
            if stale > cfg.patience:
                break
    model.load_state_dict(best_state)
    return model, curve


def predict_last_mse(samples: list[Sample]) -> float:
    """MSE of repeating each sample's newest input grid for every horizon."""
    if not samples:
        raise TrainingError("no samples to evaluate")
    total = 0.0
    count = 0
    for s in samples:
        last = s.frames[-1, 0]
        diff = s.target - last[None]
        total += float((diff ** 2).sum())
        count += diff.size
    return total / count


def eval_mse(model: ObserveNet, samples: list[Sample], batch: int = 8) -> float:
    if not samples:
        raise TrainingError("no samples to evaluate")
    x, y = _tensors(samples)
    return _eval_loss(model, x, y, batch)
