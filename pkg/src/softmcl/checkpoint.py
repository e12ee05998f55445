"""Named-array binary format shared by encoder and trainer checkpoints.

Layout (all integers little-endian u32)::

    b"SMCL" | version | repeated record:
        name_len | name (UTF-8) | rank | dims[rank] | payload (f64 LE, prod(dims))

Records are written in sorted name order.  The whole file is parsed before
anything is returned, so a truncated or corrupt file never yields partial
state.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError

MAGIC = b"SMCL"
VERSION = 1

_U32 = struct.Struct("<I")


def encode_arrays(arrays):
    chunks = [MAGIC, _U32.pack(VERSION)]
    for name in sorted(arrays):
        arr = np.array(arrays[name], dtype="<f8", order="C")
        raw = name.encode("utf-8")
        chunks.append(_U32.pack(len(raw)))
        chunks.append(raw)
        chunks.append(_U32.pack(arr.ndim))
        chunks.extend(_U32.pack(d) for d in arr.shape)
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def decode_arrays(blob):
    view = memoryview(blob)
    if len(view) < 8 or bytes(view[:4]) != MAGIC:
        raise CheckpointFormatError("bad magic: not an SMCL checkpoint")
    (version,) = _U32.unpack_from(view, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    pos = 8
    out = {}

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointFormatError("truncated checkpoint")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    while pos < len(view):
        (name_len,) = _U32.unpack(take(4))
        try:
            name = bytes(take(name_len)).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError("array name is not valid UTF-8") from None
        (rank,) = _U32.unpack(take(4))
        dims = tuple(_U32.unpack(take(4))[0] for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        payload = take(8 * count)
        if name in out:
            raise CheckpointFormatError(f"duplicate array {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    return out


def write_arrays(path, arrays):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_arrays(arrays))
    os.replace(tmp, path)


def read_arrays(path):
    return decode_arrays(Path(path).read_bytes())
