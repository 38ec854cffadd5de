"""Binary parameter container shared by every module.

Layout: magic bytes "DMFB", format version u32, array count u64, then per
array: name length u32 + UTF-8 name, rank u32, dims as u64 little-endian,
then f32 data little-endian.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .nn import ParamSet

MAGIC = b"DMFB"
VERSION = 1


def save_params(path, params: ParamSet) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(params)))
        for name, arr in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.astype("<f4").tobytes())


def load_params(path) -> ParamSet:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a DMFB checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (count,) = struct.unpack("<Q", fh.read(8))
        params = ParamSet()
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(rank))
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(size * 4), dtype="<f4").reshape(shape)
            params[name] = data.astype(np.float32)
        return params
