"""Binary checkpoint format shared by the embedding pretrainer and the agent.

Layout: 6 magic bytes ``MOFIR1``, then repeated records until EOF::

    [name_len: u32 LE][name: UTF-8][elem_count: u64 LE][values: f32 LE * count]

Arrays are stored flat; callers reshape against their own schema on load.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MOFIR1"


class CheckpointError(ValueError):
    """Corrupt or truncated checkpoint file."""


class VersionError(CheckpointError):
    """The file does not start with the expected magic bytes."""


class SchemaError(CheckpointError):
    """Stored arrays do not match the expected architecture."""


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named arrays, flattened to float32, in sorted name order."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name in sorted(arrays):
            raw = name.encode("utf-8")
            flat = np.ascontiguousarray(arrays[name], dtype="<f4").reshape(-1)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<Q", flat.size))
            fh.write(flat.tobytes())


def load_arrays(path) -> dict[str, np.ndarray]:
    """Read every record; returns name -> flat float32 array."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise VersionError(f"{path}: bad magic bytes, not a MOFIR1 checkpoint")
    out: dict[str, np.ndarray] = {}
    pos = len(MAGIC)
    n = len(data)
    while pos < n:
        if pos + 4 > n:
            raise CheckpointError(f"{path}: truncated record header")
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + name_len > n:
            raise CheckpointError(f"{path}: truncated record name")
        try:
            name = data[pos: pos + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{path}: undecodable record name") from exc
        pos += name_len
        if pos + 8 > n:
            raise CheckpointError(f"{path}: truncated element count for {name!r}")
        (count,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        nbytes = count * 4
        if pos + nbytes > n:
            raise CheckpointError(f"{path}: truncated values for {name!r}")
        out[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).copy()
        pos += nbytes
    return out


def require(arrays: dict[str, np.ndarray], name: str,
            shape: tuple[int, ...]) -> np.ndarray:
    """Fetch one record and reshape it, or raise SchemaError."""
    if name not in arrays:
        raise SchemaError(f"checkpoint is missing record {name!r}")
    flat = arrays[name]
    expected = int(np.prod(shape)) if shape else 1
    if flat.size != expected:
        raise SchemaError(
            f"record {name!r} has {flat.size} values, architecture needs "
            f"{expected} (shape {shape})")
    return flat.reshape(shape)
