"""Binary field snapshots (``MXF1``).

Layout, all little-endian::

    b"MXF1"
    u32 dim
    u32 n            (dim times)
    f64 extent       (dim times)
    u32 field_count
    (u32 byte_length, utf-8 name)   (field_count times)
    f64 samples, row-major, one grid-shaped block per field

Vector fields are stored as one named block per component.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .grid import Grid

MAGIC = b"MXF1"


def write_snapshot(path: Union[str, Path], grid: Grid, fields: Mapping[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<I", grid.dim)]
    parts.append(struct.pack(f"<{grid.dim}I", *grid.n))
    parts.append(struct.pack(f"<{grid.dim}d", *grid.extent))
    parts.append(struct.pack("<I", len(fields)))
    blocks = []
    for name, arr in fields.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        arr = np.asarray(arr, dtype="<f8")
        if arr.shape != grid.shape:
            raise ValueError(f"field {name!r} has shape {arr.shape}, grid is {grid.shape}")
        blocks.append(np.ascontiguousarray(arr).tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts + blocks))


def read_snapshot(path: Union[str, Path]) -> tuple[Grid, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not an MXF1 snapshot")
    off = 4
    (dim,) = struct.unpack_from("<I", data, off)
    off += 4
    n = struct.unpack_from(f"<{dim}I", data, off)
    off += 4 * dim
    extent = struct.unpack_from(f"<{dim}d", data, off)
    off += 8 * dim
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    names = []
    for _ in range(count):
        (length,) = struct.unpack_from("<I", data, off)
        off += 4
        names.append(data[off:off + length].decode("utf-8"))
        off += length
    grid = Grid(dim=dim, extent=tuple(extent), n=tuple(n))
    block = int(np.prod(n))
    fields = {}
    for name in names:
        arr = np.frombuffer(data, dtype="<f8", count=block, offset=off).reshape(n)
        fields[name] = arr.astype(float)
        off += 8 * block
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return grid, fields
