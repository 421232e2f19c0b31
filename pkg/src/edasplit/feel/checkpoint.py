"""Self-describing binary checkpoints for ModelParams.

Layout (all integers little-endian)::

    magic    8 bytes  b"EDAFEEL\\0"
    version  uint32
    arch     uint32 byte length + UTF-8 JSON of ArchConfig fields
    count    uint32 number of parameters
    per parameter:
        name   uint16 byte length + UTF-8
        ndim   uint8, then ndim x uint32 dimensions
        data   prod(shape) x float64 ('<f8'), C order
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, fields
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from ..errors import CheckpointError
from .autograd import Tensor
from .model import ArchConfig, ModelParams, param_shapes

MAGIC = b"EDAFEEL\0"
VERSION = 1


def _write(fh: BinaryIO, params: ModelParams):
    fh.write(MAGIC)
    fh.write(struct.pack("<I", VERSION))
    arch = json.dumps(asdict(params.arch), sort_keys=True).encode("utf-8")
    fh.write(struct.pack("<I", len(arch)))
    fh.write(arch)
    fh.write(struct.pack("<I", len(params.tensors)))
    for name, t in params.tensors.items():
        raw = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<B", t.data.ndim))
        fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
        fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def save_checkpoint(params: ModelParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        _write(fh, params)
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: Union[str, Path]) -> ModelParams:
    """Read a checkpoint, rejecting bad magic, other versions or shape mismatches."""
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    (n_arch,) = r.unpack("<I")
    try:
        arch_fields = json.loads(r.take(n_arch).decode("utf-8"))
        known = {f.name for f in fields(ArchConfig)}
        if set(arch_fields) != known:
            raise CheckpointError(f"{path}: architecture fields {sorted(arch_fields)} do not match")
        arch = ArchConfig(**arch_fields)
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad architecture record: {exc}") from exc
    expected = param_shapes(arch)
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (n_name,) = r.unpack("<H")
        name = r.take(n_name).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = tuple(r.unpack(f"<{ndim}I")) if ndim else ()
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected parameter {name!r}")
        if shape != expected[name]:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {shape}, expected {expected[name]}")
        size = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        tensors[name] = Tensor(data, True, name)
    missing = set(expected) - set(tensors)
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: trailing bytes after last parameter")
    return ModelParams(arch, {n: tensors[n] for n in expected})
