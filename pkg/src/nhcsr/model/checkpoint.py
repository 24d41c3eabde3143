"""NHCK checkpoint files.

Layout (little-endian)::

    b"NHCK"  u32 version
    u32 record length, UTF-8 JSON record (model config, normalization, extras)
    u32 tensor count
    per tensor: u32 name length, name, u32 ndim, ndim x u32 dims, f64 data
    u32 CRC32 of everything before it

Any tensors beyond the model parameters (optimizer moments, for instance) are
stored the same way under their own name prefixes.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import ChecksumError, FormatError
from ..numerics import Tensor
from .config import ModelConfig
from .network import param_shapes

MAGIC = b"NHCK"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    y_min: float = 0.0
    y_max: float = 1.0
    extra: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    key = name.encode("utf-8")
    arr = np.asarray(arr, dtype="<f8")
    head = struct.pack("<I", len(key)) + key + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    record = {"config": ckpt.config.to_dict(), "y_min": ckpt.y_min, "y_max": ckpt.y_max,
              "extra": ckpt.extra}
    rec = json.dumps(record, sort_keys=True).encode("utf-8")
    tensors = {k: (v.data if isinstance(v, Tensor) else v) for k, v in ckpt.params.items()}
    clash = set(tensors) & set(ckpt.arrays)
    if clash:
        raise FormatError(f"array names collide with parameters: {sorted(clash)}")
    tensors.update(ckpt.arrays)
    parts = [MAGIC, struct.pack("<II", VERSION, len(rec)), rec, struct.pack("<I", len(tensors))]
    parts += [_pack_array(k, v) for k, v in tensors.items()]
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.off = buf, 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise FormatError("truncated checkpoint")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals


def load_checkpoint(path) -> Checkpoint:
    """Read and verify a checkpoint; parameters come back as trainable Tensors."""
    raw = open(path, "rb").read()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise FormatError("not an NHCK checkpoint (bad magic)")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("checkpoint checksum mismatch")
    rd = _Reader(body)
    rd.take(4)
    version = rd.u32()
    if version != VERSION:
        raise FormatError(f"unsupported NHCK version {version}")
    try:
        record = json.loads(rd.take(rd.u32()).decode("utf-8"))
        cfg = ModelConfig.from_dict(record["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad checkpoint record: {exc}") from None
    tensors = {}
    for _ in range(rd.u32()):
        name = rd.take(rd.u32()).decode("utf-8")
        ndim = rd.u32()
        dims = () if ndim == 0 else ((rd.u32(),) if ndim == 1 else tuple(rd.u32(ndim)))
        count = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(rd.take(8 * count), "<f8").reshape(dims).astype(np.float64)
    if rd.off != len(body):
        raise FormatError("trailing bytes in checkpoint")

    shapes = param_shapes(cfg)
    params = {}
    for name, (shape, _) in shapes.items():
        if name not in tensors:
            raise FormatError(f"checkpoint is missing parameter {name}")
        if tensors[name].shape != tuple(shape):
            raise FormatError(f"parameter {name} has shape {tensors[name].shape}, expected {shape}")
        params[name] = Tensor(tensors.pop(name), requires_grad=True, name=name)
    return Checkpoint(cfg, params, record.get("y_min", 0.0), record.get("y_max", 1.0),
                      record.get("extra", {}), tensors)
