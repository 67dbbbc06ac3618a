"""Model file format: magic "OBSV", version, JSON config echo, then raw
little-endian float32 parameter blobs keyed by name.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..util import atomic_write_bytes
from .model import ObserveNet, PredictorConfig

MAGIC = b"OBSV"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def save_model(model: ObserveNet, path: str | Path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg_bytes = json.dumps(model.cfg.to_dict(), sort_keys=True).encode()
    buf.write(struct.pack("<I", len(cfg_bytes)))
    buf.write(cfg_bytes)
    params = sorted(model.state_dict().items())
    buf.write(struct.pack("<I", len(params)))
    for name, tensor in params:
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        arr = tensor.detach().numpy().astype("<f4")
        buf.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        buf.write(arr.tobytes())
    atomic_write_bytes(Path(path), buf.getvalue())


def _read(buf, n: int) -> bytes:
    b = buf.read(n)
    if len(b) != n:
        raise ModelFormatError("truncated model file")
    return b


def load_model(path: str | Path) -> ObserveNet:
    with open(path, "rb") as fh:
        buf = io.BytesIO(fh.read())
    if _read(buf, 4) != MAGIC:
        raise ModelFormatError("bad magic; not a model file")
    (version,) = struct.unpack("<I", _read(buf, 4))
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    (cfg_len,) = struct.unpack("<I", _read(buf, 4))
    cfg = PredictorConfig.from_dict(json.loads(_read(buf, cfg_len)))
    model = ObserveNet(cfg)
    (n_params,) = struct.unpack("<I", _read(buf, 4))
    state = {}
    for _ in range(n_params):
        (name_len,) = struct.unpack("<H", _read(buf, 2))
        name = _read(buf, name_len).decode()
        (ndim,) = struct.unpack("<B", _read(buf, 1))
        shape = tuple(struct.unpack("<I", _read(buf, 4))[0] for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(_read(buf, 4 * count), dtype="<f4").reshape(shape)
        state[name] = torch.as_tensor(arr.copy())
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise ModelFormatError(f"missing parameters: {sorted(missing)[:3]}")
    model.load_state_dict(state)
    return model
