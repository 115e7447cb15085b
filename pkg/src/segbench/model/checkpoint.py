"""Versioned binary checkpoint of named tensors.

Layout (little-endian)::

    b"SGBK" | u32 version | u32 count
    count x ( u16 name_len | name utf-8 | u8 dtype | u8 ndim | ndim x u32 dim | raw data )
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import FormatError

MAGIC = b"SGBK"
VERSION = 1
_DTYPES = {0: np.float32, 1: np.float64, 2: np.int64}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def dumps(tensors: dict) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        a = tensors[name]
        a = a.detach().cpu().numpy() if isinstance(a, torch.Tensor) else np.asarray(a)
        code = _CODES.get(a.dtype)
        if code is None:
            raise FormatError(f"{name}: unsupported dtype {a.dtype}")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<BB{a.ndim}I", code, a.ndim, *a.shape))
        out.append(np.ascontiguousarray(a).astype(a.dtype.newbyteorder("<")).tobytes())
    return b"".join(out)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 12
    tensors = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            code, ndim = struct.unpack_from("<BB", blob, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            dt = np.dtype(_DTYPES[code]).newbyteorder("<")
            size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + size > len(blob):
                raise FormatError(f"{name}: truncated tensor data")
            tensors[name] = np.frombuffer(blob, dtype=dt, count=size // dt.itemsize, offset=pos).reshape(shape).copy()
            pos += size
    except (struct.error, KeyError) as e:
        raise FormatError(f"corrupt checkpoint: {e}") from e
    if pos != len(blob):
        raise FormatError("trailing bytes after last tensor")
    return tensors


def save_decoder(path, model) -> None:
    Path(path).write_bytes(dumps(model.decoder.state_dict()))


def load_decoder(path, model) -> None:
    state = {k: torch.from_numpy(v) for k, v in loads(Path(path).read_bytes()).items()}
    model.decoder.load_state_dict(state)
