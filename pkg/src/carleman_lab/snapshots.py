"""Field snapshot files.

Binary layout, all little-endian::

    magic     8 bytes  b"CKSNAP01"
    kind      u1       0 = kinetic, 1 = limit
    n         u1
    cells     n * u4
    dx        f8
    origin    n * f8
    t         f8
    nfields   u4
    data      nfields * prod(cells) * f8, row-major (C order), field-major

The CSV export has one row per cell: ``x1..xn`` followed by ``f0..f{k-1}``.
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Grid, PERIODIC

MAGIC = b"CKSNAP01"
KINDS = {"kinetic": 0, "limit": 1}


@dataclass
class Snapshot:
    fields: np.ndarray  # (nfields, *cells)
    grid: Grid
    t: float
    kind: str = "kinetic"


def to_bytes(snap: Snapshot) -> bytes:
    g = snap.grid
    data = np.ascontiguousarray(snap.fields, dtype="<f8")
    if data.shape[1:] != g.shape:
        data = data.reshape((-1, *g.shape))
    head = bytearray(MAGIC)
    head += struct.pack("<BB", KINDS[snap.kind], g.n)
    head += struct.pack(f"<{g.n}I", *g.cells)
    head += struct.pack("<d", g.dx)
    head += struct.pack(f"<{g.n}d", *g.origin)
    head += struct.pack("<dI", snap.t, data.shape[0])
    return bytes(head) + data.tobytes(order="C")


def from_bytes(blob: bytes, boundary: str = PERIODIC) -> Snapshot:
    if blob[:8] != MAGIC:
        raise ValueError("not a snapshot file")
    off = 8
    kind_code, n = struct.unpack_from("<BB", blob, off)
    off += 2
    cells = struct.unpack_from(f"<{n}I", blob, off)
    off += 4 * n
    (dx,) = struct.unpack_from("<d", blob, off)
    off += 8
    origin = struct.unpack_from(f"<{n}d", blob, off)
    off += 8 * n
    t, nfields = struct.unpack_from("<dI", blob, off)
    off += 12
    count = nfields * int(np.prod(cells))
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape((nfields, *cells))
    kind = {v: k for k, v in KINDS.items()}[kind_code]
    grid = Grid(n, tuple(cells), dx, tuple(origin), boundary)
    return Snapshot(data.astype(float), grid, t, kind)


def write_binary(path, snap: Snapshot) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(snap))
    return path


def read_binary(path, boundary: str = PERIODIC) -> Snapshot:
    return from_bytes(Path(path).read_bytes(), boundary)


def to_csv(snap: Snapshot) -> str:
    g = snap.grid
    fields = np.asarray(snap.fields).reshape(-1, g.size)
    coords = g.coordinates().reshape(g.n, g.size)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{a + 1}" for a in range(g.n)] + [f"f{k}" for k in range(fields.shape[0])])
    for c in range(g.size):
        w.writerow([repr(float(v)) for v in coords[:, c]] + [repr(float(v)) for v in fields[:, c]])
    return buf.getvalue()


def write_csv(path, snap: Snapshot) -> Path:
    path = Path(path)
    path.write_text(to_csv(snap))
    return path
