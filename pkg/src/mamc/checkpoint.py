"""Binary checkpoint container for named float32 arrays.

Layout (little-endian): magic ``MAMP``, version u32, meta string
(u32 length + utf-8 bytes, used for the architecture description),
record count u32, then per record: name (u32 length + utf-8), ndim u32,
dims u32 each, float32 data.  Round-trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["CheckpointFormatError", "save_arrays", "load_arrays"]

MAGIC = b"MAMP"
FORMAT_VERSION = 1


class CheckpointFormatError(Exception):
    """Raised on malformed checkpoint files; carries the byte offset."""

    def __init__(self, offset: int, message: str):
        self.offset = offset
        super().__init__(f"at byte {offset}: {message}")


def save_arrays(path: str, arrays: dict[str, np.ndarray], meta: str = "") -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        meta_bytes = meta.encode("utf-8")
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            name_bytes = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    offset = f.tell()
    data = f.read(n)
    if len(data) != n:
        raise CheckpointFormatError(
            offset, f"truncated file while reading {what} ({len(data)}/{n} bytes)"
        )
    return data


def load_arrays(path: str) -> tuple[str, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise CheckpointFormatError(0, f"bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointFormatError(
                4, f"unsupported format version {version}, expected {FORMAT_VERSION}"
            )
        (meta_len,) = struct.unpack("<I", _read_exact(f, 4, "meta length"))
        meta = _read_exact(f, meta_len, "meta").decode("utf-8")
        (count,) = struct.unpack("<I", _read_exact(f, 4, "record count"))
        arrays: dict[str, np.ndarray] = {}
        for i in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4, f"record {i} name"))
            name = _read_exact(f, name_len, f"record {i} name").decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(f, 4, f"record {i} ndim"))
            dims = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, f"record {i} dims"))
            size = int(np.prod(dims)) if ndim else 1
            raw = _read_exact(f, 4 * size, f"record {i} data")
            arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        offset = f.tell()
        if f.read(1):
            raise CheckpointFormatError(offset, "trailing bytes after last record")
    return meta, arrays
