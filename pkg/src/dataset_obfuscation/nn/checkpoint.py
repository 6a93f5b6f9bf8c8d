"""Binary weight checkpoint container.

Layout (little-endian)::

    b"OBCK" | u32 version | 32-byte arch fingerprint
    | u32 len + architecture JSON
    | u32 tensor count
    | per tensor: u16 len + name | u8 rank | rank * u64 dims | float64 data

The architecture JSON is stored so a checkpoint can be loaded without any
side information; its digest must equal the fingerprint in the header.
"""
from __future__ import annotations

import io
import json
import struct

import numpy as np

from .. import rng
from ..errors import FormatError
from .model import ModelArch, ModelWeights

MAGIC = b"OBCK"
VERSION = 1


def write_tensors(fh, arch: ModelArch, tensors: dict) -> None:
    fh.write(MAGIC + struct.pack("<I", VERSION) + arch.fingerprint)
    arch_json = arch.to_json().encode()
    fh.write(struct.pack("<I", len(arch_json)) + arch_json)
    fh.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode()
        fh.write(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(np.ascontiguousarray(arr).tobytes())


def _read(fh, n: int) -> bytes:
    b = fh.read(n)
    if len(b) != n:
        raise FormatError("truncated checkpoint")
    return b


def read_tensors(fh) -> tuple[ModelArch, dict]:
    head = _read(fh, 8)
    if head[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {head[:4]!r}")
    version = struct.unpack("<I", head[4:])[0]
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    fingerprint = _read(fh, 32)
    (alen,) = struct.unpack("<I", _read(fh, 4))
    arch_json = _read(fh, alen)
    if rng.digest(arch_json) != fingerprint:
        raise FormatError("architecture JSON does not match the header fingerprint")
    arch = ModelArch.from_dict(json.loads(arch_json))
    (count,) = struct.unpack("<I", _read(fh, 4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read(fh, 2))
        name = _read(fh, nlen).decode()
        (rank,) = struct.unpack("<B", _read(fh, 1))
        dims = struct.unpack(f"<{rank}Q", _read(fh, 8 * rank))
        size = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(_read(fh, 8 * size), dtype="<f8").astype(np.float64).reshape(dims)
    return arch, tensors


def dumps(weights: ModelWeights) -> bytes:
    buf = io.BytesIO()
    write_tensors(buf, weights.arch, dict(weights.items()))
    return buf.getvalue()


def loads(data: bytes) -> ModelWeights:
    arch, tensors = read_tensors(io.BytesIO(data))
    return ModelWeights(arch, tensors)


def save(weights: ModelWeights, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(weights))


def load(path) -> ModelWeights:
    with open(path, "rb") as fh:
        return loads(fh.read())
