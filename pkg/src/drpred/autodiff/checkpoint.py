"""Named-array checkpoint container.

Binary layout, all integers little-endian:

    magic   4 bytes  b"DPCK"
    version u32      currently 1
    count   u32      number of entries
    entry*  count times:
        name_len u16, name UTF-8 bytes
        dtype    u8   0=float32 1=float64 2=int64 3=uint8
        rank     u8
        extents  rank * u64
        data     raw little-endian C-order values

Entries are written in sorted-name order so identical contents always
produce identical bytes.
"""

from __future__ import annotations

import struct

import numpy as np

from drpred.errors import CheckpointError

MAGIC = b"DPCK"
VERSION = 1

_DTYPE_TAGS = {0: "<f4", 1: "<f8", 2: "<i8", 3: "|u1"}
_TAG_FOR = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2, np.dtype("uint8"): 3}


def save_arrays(path, arrays: dict) -> None:
    """Write a name -> ndarray mapping to `path` in container format."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name in sorted(arrays):
            arr = np.asarray(arrays[name])
            if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
                arr = np.ascontiguousarray(arr)
            if arr.dtype not in _TAG_FOR:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for entry {name!r}")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            tag = _TAG_FOR[arr.dtype]
            fh.write(struct.pack("<BB", tag, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype(_DTYPE_TAGS[tag]).tobytes(order="C"))


def load_arrays(path) -> dict:
    """Read a container file back into a name -> ndarray dict."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint container")
        version, count = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported container version {version}")
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            tag, rank = struct.unpack("<BB", fh.read(2))
            if tag not in _DTYPE_TAGS:
                raise CheckpointError(f"{path}: unknown dtype tag {tag}")
            shape = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
            dt = np.dtype(_DTYPE_TAGS[tag])
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize if rank else dt.itemsize
            buf = fh.read(n_bytes)
            if len(buf) != n_bytes:
                raise CheckpointError(f"{path}: truncated entry {name!r}")
            out[name] = np.frombuffer(buf, dtype=dt).reshape(shape).copy()
        return out
