"""Model checkpoint container (little-endian).

Layout::

    offset  size  field
    0       4     magic "VXCK"
    4       2     version (u16), currently 1
    6       2     reserved (zero)
    8       4     header length (u32)
    12      n     header: UTF-8 JSON {"config": ..., "meta": ...}
    ...     4     blob count (u32)
    per blob:
            2     name length (u16), then UTF-8 name
            1     dtype tag (u8): 0 = f32, 1 = f64
            1     rank (u8)
            4*r   dims (u32 each)
            ...   raw little-endian payload
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"VXCK"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}


def save_checkpoint(path, config: dict, arrays: dict, meta: dict | None = None) -> None:
    header = json.dumps({"config": config, "meta": meta or {}}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HH", VERSION, 0))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            # ascontiguousarray promotes 0-d to 1-d; restore the shape
            arr = np.ascontiguousarray(arr).reshape(arr.shape)
            if arr.dtype not in _TAGS:
                arr = arr.astype("<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", _TAGS[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path):
    """Returns (config, arrays, meta)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic at offset 0: {raw[:4]!r} (expected {MAGIC!r})")
    version, _ = struct.unpack_from("<HH", raw, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    off = 12
    try:
        header = json.loads(raw[off: off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"corrupt header at offset {off}: {e}")
    off += hlen
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off: off + nlen].decode("utf-8")
        off += nlen
        tag, rank = struct.unpack_from("<BB", raw, off)
        off += 2
        if tag not in _DTYPES:
            raise FormatError(f"unknown dtype tag {tag} at offset {off - 2}")
        dims = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        dtype = _DTYPES[tag]
        nbytes = int(np.prod(dims)) * dtype.itemsize if rank else dtype.itemsize
        if len(raw) < off + nbytes:
            raise FormatError(
                f"truncated blob '{name}' at offset {off}: need {nbytes} bytes, "
                f"have {len(raw) - off}")
        arrays[name] = np.frombuffer(raw[off: off + nbytes], dtype=dtype) \
            .reshape(dims).copy()
        off += nbytes
    return header["config"], arrays, header.get("meta", {})
