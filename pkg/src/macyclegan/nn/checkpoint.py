"""MACK parameter checkpoints: a flat, ordered list of named float64 arrays.

Layout (little-endian): ``b"MACK" | version u32 | count u32`` then for each
array ``name_len u16 | name utf-8 | rank u8 | dims u32 * rank | f64 payload``
(C order).
"""
import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"MACK"
VERSION = 1


def checkpoint_bytes(arrays):
    """Serialize a mapping ``name -> array``; insertion order is preserved."""
    out = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"parameter name too long: {name[:40]}...")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def checkpoint_from_bytes(buf):
    if buf[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {bytes(buf[:4])!r}")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        pos = 12
        arrays = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = bytes(buf[pos:pos + n]).decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * size > len(buf):
                raise FormatError(f"truncated payload for {name!r}")
            arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).astype(np.float64)
            arrays[name] = arr.reshape(dims)
            pos += 8 * size
    except struct.error as exc:
        raise FormatError(f"truncated checkpoint: {exc}") from None
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after checkpoint payload")
    return arrays


def save_checkpoint(path, arrays):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(arrays))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
