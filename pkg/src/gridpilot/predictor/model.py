"""Occupancy sequence model: shared convolutional encoder per frame, GRU
across the history, one transposed-convolution decoder branch per future
frame. All cells squashed to [0,1] by a sigmoid output.

Input channels per frame: stabilized occupancy grid, constant plane of
scaled speed, constant plane of scaled yaw rate, rasterized route.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

IN_CHANNELS = 4
V_SCALE = 0.1
YAWRATE_SCALE = 2.0
OUT_BIAS = -3.0


@dataclass(frozen=True)
class PredictorConfig:
    tau_i: int = 4
    tau_o: int = 5
    grid_size: int = 100
    resolution: float = 1.0
    enc_channels: tuple = (16, 32, 64)
    hidden: int = 256
    learning_rate: float = 3e-4
    max_epochs: int = 200
    batch_size: int = 4
    patience: int = 20

    def __post_init__(self) -> None:
        if self.tau_i < 1:
            raise ValueError("tau_i must be >= 1")
        if not 1 <= self.tau_o <= 20:
            raise ValueError("tau_o must be in [1, 20]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return {
            "tau_i": self.tau_i, "tau_o": self.tau_o,
            "grid_size": self.grid_size, "resolution": self.resolution,
            "enc_channels": list(self.enc_channels), "hidden": self.hidden,
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs, "batch_size": self.batch_size,
            "patience": self.patience,
        }

    @staticmethod
    def from_dict(d: dict) -> "PredictorConfig":
        d = dict(d)
        d["enc_channels"] = tuple(d["enc_channels"])
        return PredictorConfig(**d)


def _stage_sizes(size: int, n_stages: int) -> list[int]:
    sizes = [size]
    for _ in range(n_stages):
        sizes.append((sizes[-1] - 1) // 2 + 1)
    return sizes


class ObserveNet(nn.Module):
    def __init__(self, cfg: PredictorConfig):
        super().__init__()
        self.cfg = cfg
        chans = (IN_CHANNELS,) + tuple(cfg.enc_channels)
        enc = []
        for i in range(len(cfg.enc_channels)):
            enc.append(nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1))
            enc.append(nn.ELU())
        self.encoder = nn.Sequential(*enc)
        self.sizes = _stage_sizes(cfg.grid_size, len(cfg.enc_channels))
        bottom = self.sizes[-1]
        pooled = bottom // 2 if bottom >= 2 else 1
        self.pool = nn.AvgPool2d(2) if bottom >= 2 else nn.Identity()
        self.embed = nn.Linear(cfg.enc_channels[-1] * pooled * pooled, cfg.hidden)
        self.act = nn.ELU()
        self.gru = nn.GRU(cfg.hidden, cfg.hidden, batch_first=True)
        self.branch_fc = nn.ModuleList()
        self.branch_deconv = nn.ModuleList()
        c_last = cfg.enc_channels[-1]
        dec_chans = (c_last,) + tuple(reversed(cfg.enc_channels[:-1])) + (1,)
        for _ in range(cfg.tau_o):
            self.branch_fc.append(nn.Linear(cfg.hidden, c_last * bottom * bottom))
            layers = []
            for i in range(len(dec_chans) - 1):
                src = self.sizes[-1 - i]
                dst = self.sizes[-2 - i]
                op = dst - ((src - 1) * 2 + 1)
                layers.append(nn.ConvTranspose2d(dec_chans[i], dec_chans[i + 1], 3,
                                                 stride=2, padding=1,
                                                 output_padding=op))
                if i < len(dec_chans) - 2:
                    layers.append(nn.ELU())
            self.branch_deconv.append(nn.Sequential(*layers))

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """frames (B, tau_i, C, H, W) -> predictions (B, tau_o, H, W)."""
        B, T, C, H, W = frames.shape
        flat = frames.reshape(B * T, C, H, W)
        feat = self.pool(self.encoder(flat))
        emb = self.act(self.embed(feat.reshape(B * T, -1)))
        seq = emb.reshape(B, T, -1)
        _, h = self.gru(seq)
        h = h[-1]
        bottom = self.sizes[-1]
        outs = []
        for fc, deconv in zip(self.branch_fc, self.branch_deconv):
            x = self.act(fc(h)).reshape(B, self.cfg.enc_channels[-1], bottom, bottom)
            outs.append(torch.sigmoid(deconv(x)).squeeze(1))
        return torch.stack(outs, dim=1)


def model_init(cfg: PredictorConfig, seed: int) -> ObserveNet:
    """Build the network with parameters drawn deterministically from seed."""
    model = ObserveNet(cfg)
    gen = torch.Generator().manual_seed(seed)
    for name, p in sorted(model.named_parameters()):
        with torch.no_grad():
            if p.dim() >= 2:
                fan_in = int(np.prod(p.shape[1:]))
                bound = 1.0 / math.sqrt(max(fan_in, 1))
                p.copy_(torch.empty_like(p).uniform_(-bound, bound, generator=gen))
            else:
                p.zero_()
    # bias the output layers negative so fresh models emit near-empty grids
    with torch.no_grad():
        for deconv in model.branch_deconv:
            deconv[-1].bias.fill_(OUT_BIAS)
    return model


def forward(model: ObserveNet, frames: np.ndarray) -> np.ndarray:
    """Numpy wrapper: (tau_i, C, H, W) or (B, tau_i, C, H, W) -> grids in [0,1]."""
    x = torch.as_tensor(np.asarray(frames, dtype=np.float32))
    single = x.dim() == 4
    if single:
        x = x.unsqueeze(0)
    model.eval()
    with torch.no_grad():
        y = model(x)
    out = y.numpy()
    return out[0] if single else out


def loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over branches and cells."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return torch.mean((pred - target) ** 2)


def build_frames(history_grids: np.ndarray, v: np.ndarray, yaw_rate: np.ndarray,
                 route_raster: np.ndarray) -> np.ndarray:
    """Stack per-frame channels: (tau_i, H, W) grids + scalar planes."""
    tau_i, H, W = history_grids.shape
    frames = np.zeros((tau_i, IN_CHANNELS, H, W), dtype=np.float32)
    frames[:, 0] = history_grids
    frames[:, 1] = (np.asarray(v, dtype=np.float32) * V_SCALE)[:, None, None]
    frames[:, 2] = (np.asarray(yaw_rate, dtype=np.float32) * YAWRATE_SCALE)[:, None, None]
    frames[:, 3] = route_raster
    return frames


def gradient_check(model: ObserveNet, frames: np.ndarray, target: np.ndarray,
                   epsilon: float = 1e-4, n_per_param: int = 3,
                   seed: int = 0) -> float:
    """Max relative error between autograd and central differences.

    Runs in float64 on a seeded random subset of parameter entries; the
    caller's model is left untouched.
    """
    model = copy.deepcopy(model).double()
    x = torch.as_tensor(np.asarray(frames, dtype=np.float64)).unsqueeze(0)
    t = torch.as_tensor(np.asarray(target, dtype=np.float64)).unsqueeze(0)
    model.zero_grad()
    out = model(x)
    loss(out, t).backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in sorted(model.named_parameters()):
        flat = p.detach().reshape(-1)
        grad = p.grad.reshape(-1)
        idx = rng.choice(flat.numel(), size=min(n_per_param, flat.numel()),
                         replace=False)
        for i in idx:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + epsilon
                up = loss(model(x), t).item()
                flat[i] = orig - epsilon
                dn = loss(model(x), t).item()
                flat[i] = orig
            fd = (up - dn) / (2.0 * epsilon)
            an = grad[i].item()
            rel = abs(an - fd) / max(1e-8, abs(an) + abs(fd))
            worst = max(worst, rel)
    return worst
