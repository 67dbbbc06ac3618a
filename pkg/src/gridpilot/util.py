"""Shared helpers: seeding, atomic file writes, deterministic serialization."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np


def seed_sequence(root_seed: int, *path: int | str) -> np.random.SeedSequence:
    """Derive a child seed sequence from one root seed and a label path.

    Every random stream in the system comes out of one 64-bit root seed;
    the label path keeps subsystems decorrelated and reproducible.
    """
    key = tuple(_label_to_int(p) for p in path)
    return np.random.SeedSequence(entropy=int(root_seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=key)


def rng_for(root_seed: int, *path: int | str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(root_seed, *path)))


def int_seed_for(root_seed: int, *path: int | str) -> int:
    """63-bit integer seed for libraries that take a plain int."""
    state = seed_sequence(root_seed, *path).generate_state(1, dtype=np.uint64)[0]
    return int(state) & 0x7FFFFFFFFFFFFFFF


def _label_to_int(label: int | str) -> int:
    if isinstance(label, int):
        return label & 0xFFFFFFFF
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write via a temp file and rename so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_gridpilot_")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def json_line(record: dict) -> str:
    """One JSON object per line, sorted keys so identical runs give identical bytes."""
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
