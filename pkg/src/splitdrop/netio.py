"""Versioned little-endian binary weight files.

Layout: magic ``NNWF``, format version (u32), record count (u32), then per
record: name length (u32), utf-8 name, rank (u32), dims (u32 each), float32
payload. All integers little-endian. Readers reject unknown versions.
"""

from __future__ import annotations

import struct
from typing import Dict, List, Sequence, Tuple

import numpy as np

MAGIC = b"NNWF"
VERSION = 1


class WeightFormatError(ValueError):
    """Malformed, truncated, or unsupported weight file."""


def save_weights(path, entries: Sequence[Tuple[str, np.ndarray]]):
    """Write named float32 arrays in the given order."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(entries)))
        for name, arr in entries:
            arr = np.ascontiguousarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise WeightFormatError("truncated weight file")
    return data


def load_weights(path) -> Dict[str, np.ndarray]:
    """Read a weight file back into an ordered name -> float32 array dict."""
    out: Dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if _read_exact(f, 4) != MAGIC:
            raise WeightFormatError("bad magic; not a weight file")
        version, count = struct.unpack("<II", _read_exact(f, 8))
        if version != VERSION:
            raise WeightFormatError(f"unsupported weight format version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4))
            shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
            n_items = int(np.prod(shape, dtype=np.int64)) if rank else 1
            payload = _read_exact(f, 4 * n_items)
            arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
            if name in out:
                raise WeightFormatError(f"duplicate array name {name!r}")
            out[name] = arr.astype(np.float32)
        if f.read(1):
            raise WeightFormatError("trailing bytes after last record")
    return out
