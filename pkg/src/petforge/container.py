"""PETW tensor container.

Layout (little-endian, no padding)::

    b"PETW" | u32 version=1 | u32 count
    count x ( u32 name_len | name utf-8 | u8 dtype (0=f32, 1=f64) | u8 rank
              | rank x u64 dims | row-major payload )
"""
import os
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"PETW"
VERSION = 1
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def dumps(tensors):
    """Serialize an ordered mapping ``name -> ndarray`` to bytes."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise FormatError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", _CODES[dt], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(parts)


def loads(buf):
    """Parse bytes produced by :func:`dumps` into a dict of arrays."""
    view = memoryview(buf)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError(f"truncated while reading {what}", offset=pos)
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise FormatError("bad magic, not a PETW container", offset=0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    out = {}
    for _ in range(count):
        start = pos
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = bytes(take(name_len, "name")).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not valid UTF-8", offset=start + 4) from None
        code, rank = struct.unpack("<BB", take(2, "dtype/rank"))
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code} for {name!r}", offset=pos - 2)
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, "dims"))
        dt = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        payload = take(nbytes, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype=dt).reshape(dims).copy()
    if pos != len(view):
        raise FormatError("trailing bytes after last record", offset=pos)
    return out


def save(path, tensors):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(dumps(tensors))
    os.replace(tmp, path)


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
