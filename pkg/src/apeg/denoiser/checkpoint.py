"""Binary checkpoint of a trained denoiser.

Layout (little-endian)::

    b"APEGCKPT" | u32 version | u8 variant (0 = ccmdm, 1 = cadm)
    u32 n | n bytes JSON {"net": ..., "image_shape": [H, W], "norm": {...} | null}
    f64 T | f64 beta_start | f64 beta_end
    u32 block_count | u64 total_params
    per block: u32 name_len | name (utf-8) | u32 rank | rank x u32 dims | f32 payload
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..diffusion import NoiseSchedule, make_schedule
from ..fingerprint import NormStats
from .config import NetConfig
from .nets import build_net

MAGIC = b"APEGCKPT"
VERSION = 1
VARIANTS = ("ccmdm", "cadm")


class CheckpointError(ValueError):
    """Malformed or inconsistent checkpoint file."""


@dataclass
class Checkpoint:
    variant: str
    net: torch.nn.Module
    cfg: NetConfig
    image_shape: tuple
    schedule: NoiseSchedule
    norm: NormStats | None = None


def save_checkpoint(path, variant: str, net: torch.nn.Module, cfg: NetConfig, image_shape,
                    schedule: NoiseSchedule, norm: NormStats | None = None) -> Path:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    meta = {"net": cfg.to_dict(), "image_shape": list(image_shape),
            "norm": norm.to_dict() if norm is not None else None}
    blob = json.dumps(meta).encode()
    blocks = [(n, p.detach().cpu().numpy().astype("<f4")) for n, p in net.named_parameters()]
    out = bytearray()
    out += MAGIC
    out += struct.pack("<IB", VERSION, VARIANTS.index(variant))
    out += struct.pack("<I", len(blob)) + blob
    out += struct.pack("<3d", schedule.T, schedule.beta_start, schedule.beta_end)
    out += struct.pack("<IQ", len(blocks), sum(a.size for _, a in blocks))
    for name, arr in blocks:
        nb = name.encode()
        out += struct.pack("<I", len(nb)) + nb
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    path = Path(path)
    path.write_bytes(bytes(out))
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, vcode = r.unpack("<IB")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if vcode >= len(VARIANTS):
        raise CheckpointError(f"unknown variant code {vcode}")
    variant = VARIANTS[vcode]
    (n,) = r.unpack("<I")
    meta = json.loads(r.take(n).decode())
    T, b0, b1 = r.unpack("<3d")
    count, total = r.unpack("<IQ")
    state, seen = {}, 0
    for _ in range(count):
        (ln,) = r.unpack("<I")
        name = r.take(ln).decode()
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}I")
        size = int(np.prod(dims)) if rank else 1
        state[name] = torch.from_numpy(np.frombuffer(r.take(4 * size), "<f4").reshape(dims).copy())
        seen += size
    if seen != total:
        raise CheckpointError(f"parameter count mismatch: header {total}, payload {seen}")
    cfg = NetConfig.from_dict(meta["net"])
    shape = tuple(meta["image_shape"])
    net = build_net(variant, cfg, shape)
    expected = dict(net.named_parameters())
    if set(expected) != set(state):
        raise CheckpointError("parameter blocks do not match the network layout")
    for name, p in expected.items():
        if tuple(p.shape) != tuple(state[name].shape):
            raise CheckpointError(f"block {name} has shape {tuple(state[name].shape)}, expected {tuple(p.shape)}")
    with torch.no_grad():
        for name, p in expected.items():
            p.copy_(state[name])
    net.eval()
    norm = NormStats.from_dict(meta["norm"]) if meta.get("norm") else None
    return Checkpoint(variant, net, cfg, shape, make_schedule(int(T), b0, b1), norm)
