"""Binary checkpoint format.

Layout (all integers little-endian u32)::

    b"DFUI" | version | descriptor length | descriptor (UTF-8 JSON)
    | array count | per array: name length, name, rank, dims..., payload

The descriptor records the architecture, the payload dtype and free-form
metadata (training step, run config).  Payloads are little-endian IEEE-754 in
that dtype, so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path
import struct

import numpy as np

from .denoiser import Architecture, DenoiserParams, layer_shapes
from .errors import CheckpointError, MissingFileError

MAGIC = b"DFUI"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def _u32(f):
    data = f.read(4)
    if len(data) != 4:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack("<I", data)[0]


def save(path, params: DenoiserParams, meta=None, extra_arrays=None):
    """Write params (and optional extra named arrays, e.g. optimizer moments)."""
    dtype = np.dtype(params.dtype).name
    if dtype not in _DTYPES:
        raise CheckpointError(f"unsupported parameter dtype {dtype}")
    descriptor = json.dumps({"architecture": params.arch.to_dict(), "dtype": dtype,
                             "meta": meta or {}}, sort_keys=True).encode()
    arrays = dict(params.arrays)
    arrays.update(extra_arrays or {})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(descriptor)))
        f.write(descriptor)
        f.write(struct.pack("<I", len(arrays)))
        for name, a in arrays.items():
            a = np.ascontiguousarray(a, dtype=_DTYPES[dtype])
            bname = name.encode()
            f.write(struct.pack("<I", len(bname)) + bname)
            f.write(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
            f.write(a.tobytes())
    tmp.replace(path)
    return path


def load(path):
    """Return ``(params, meta, extra_arrays)``."""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"no such checkpoint: {path}")
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        version = _u32(f)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        descriptor = json.loads(f.read(_u32(f)).decode())
        dtype = np.dtype(_DTYPES[descriptor["dtype"]])
        arrays = {}
        for _ in range(_u32(f)):
            name = f.read(_u32(f)).decode()
            rank = _u32(f)
            shape = tuple(_u32(f) for _ in range(rank))
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise CheckpointError(f"{path}: truncated payload for {name}")
            arrays[name] = np.frombuffer(buf, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    arch = Architecture(**descriptor["architecture"])
    expected = layer_shapes(arch)
    params = {k: arrays.pop(k) for k in expected if k in arrays}
    missing = [k for k in expected if k not in params]
    bad = [k for k in params if params[k].shape != expected[k]]
    if missing or bad:
        raise CheckpointError(f"{path}: arrays do not match the architecture "
                              f"(missing {missing}, misshapen {bad})")
    return DenoiserParams(arch, params), descriptor["meta"], arrays
