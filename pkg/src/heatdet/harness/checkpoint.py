"""Self-describing binary checkpoints.

Layout (little-endian): magic ``HDCK``, u32 version, u32 config length and
the UTF-8 config text, u32 tensor count, then per tensor: u16 name length,
name, u8 rank, u32 per dimension, and the float64 data.
"""
import struct

import numpy as np

from .config import parse_config_text, RunConfig

MAGIC = b"HDCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, cfg, state):
    text = cfg.canonical_text().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(text)))
        fh.write(text)
        fh.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            arr = np.ascontiguousarray(state[name], dtype="<f8")
            key = name.encode("utf-8")
            fh.write(struct.pack("<HB", len(key), arr.ndim))
            fh.write(key)
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path):
    """Returns (RunConfig, state dict)."""
    with open(path, "rb") as fh:
        if _read(fh, 4, "magic") != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint")
        version, n_text = struct.unpack("<II", _read(fh, 8, "header"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        cfg = RunConfig(**parse_config_text(_read(fh, n_text, "config").decode("utf-8"), str(path)))
        (count,) = struct.unpack("<I", _read(fh, 4, "count"))
        state = {}
        for _ in range(count):
            n_key, rank = struct.unpack("<HB", _read(fh, 3, "record header"))
            name = _read(fh, n_key, "name").decode("utf-8")
            shape = struct.unpack(f"<{rank}I", _read(fh, 4 * rank, "shape"))
            size = int(np.prod(shape)) if rank else 1
            state[name] = np.frombuffer(_read(fh, 8 * size, name), dtype="<f8").reshape(shape).astype(np.float64)
        if fh.read(1):
            raise CheckpointError("trailing bytes after the last record")
    return cfg, state


def load_model(path):
    from ..model import Detector

    cfg, state = load_checkpoint(path)
    model = Detector(cfg)
    model.load_state_dict(state)
    return model
