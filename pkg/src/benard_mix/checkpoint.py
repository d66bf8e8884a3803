"""Binary field checkpoints and per-plane CSV exports.

Layout::

    b"BMIX1"                 magic
    uint32 (little endian)   header length in bytes
    header                   UTF-8 JSON
    payload                  little-endian float64 arrays, in header order

The first payload array is always the physical temperature on the full
grid, shape ``(n3 + 1, n1, n2)`` in x3-major order.  Chain checkpoints add
the interior mode array (real and imaginary parts interleaved), so a chain
restarts from exactly the state it was saved in; the noise stream is fixed
by ``(seed, chain, k)``.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import Grid, ModeSpace, ScalarField

__all__ = [
    "MAGIC",
    "VERSION",
    "CheckpointError",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "write_plane_means",
    "chain_modes",
]

MAGIC = b"BMIX1"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    field: ScalarField
    modes: np.ndarray | None = None  # interior mode array of T - Tbar
    k: int = 0
    seed: int | None = None
    chain: int | None = None
    meta: dict | None = None

    @property
    def grid(self) -> Grid:
        return self.field.grid


def _grid_header(grid: Grid) -> dict:
    return {"n1": grid.n1, "n2": grid.n2, "n3": grid.n3, "c": grid.c}


def save_checkpoint(path, field: ScalarField, modes: np.ndarray | None = None, k: int = 0,
                    seed: int | None = None, chain: int | None = None, meta: dict | None = None) -> Path:
    """Write a field (and optionally its chain state) to ``path``."""
    g = field.grid
    values = np.ascontiguousarray(field.values, dtype="<f8")
    arrays = [("T", values)]
    if modes is not None:
        modes = np.ascontiguousarray(modes, dtype=np.complex128)
        arrays.append(("S_modes", modes.view(np.float64).astype("<f8", copy=False)))
    header = {
        "version": VERSION,
        "grid": _grid_header(g),
        "bottom": float(field.bottom),
        "top": float(field.top),
        "endianness": "little",
        "dtype": "float64",
        "order": "x3-major",
        "k": int(k),
        "stream": None if seed is None else {"seed": int(seed), "chain": int(chain or 0), "next_step": int(k) + 1},
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
        "meta": meta or {},
    }
    if modes is not None:
        header["arrays"][1]["complex_shape"] = list(modes.shape)
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(a.tobytes(order="C"))
    return path


def load_checkpoint(path, grid: Grid | None = None) -> Checkpoint:
    """Read a checkpoint; with ``grid`` given, reject files for other grids."""
    data = Path(path).read_bytes()
    if data[: len(MAGIC) - 1] != MAGIC[:-1]:
        raise CheckpointError(f"{path}: not a field checkpoint (bad magic {data[:5]!r})")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: unsupported format {data[:5]!r}, expected {MAGIC!r}")
    (n,) = struct.unpack("<I", data[5:9])
    header = json.loads(data[9 : 9 + n].decode())
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {header.get('version')} is not supported (expected {VERSION})")
    if header.get("endianness") != "little":
        raise CheckpointError(f"{path}: unsupported endianness {header.get('endianness')!r}")
    gh = header["grid"]
    g = Grid(gh["n1"], gh["n2"], gh["n3"], gh["c"])
    if grid is not None and _grid_header(grid) != _grid_header(g):
        raise CheckpointError(f"{path}: checkpoint grid {_grid_header(g)} does not match {_grid_header(grid)}")
    offset = 9 + n
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError(f"{path}: truncated payload for {spec['name']}")
        a = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        if "complex_shape" in spec:
            a = a.view(np.complex128).reshape(spec["complex_shape"])
        arrays[spec["name"]] = a
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    T = arrays["T"]
    if T.shape != g.shape:
        raise CheckpointError(f"{path}: field shape {T.shape} does not match grid {g.shape}")
    field = ScalarField(g, T.copy(), header["bottom"], header["top"])
    stream = header.get("stream") or {}
    return Checkpoint(field, arrays.get("S_modes"), header["k"], stream.get("seed"), stream.get("chain"), header.get("meta"))


def chain_modes(ckpt: Checkpoint, space: ModeSpace) -> np.ndarray:
    """Deviation modes of a checkpoint, exact if they were stored."""
    if ckpt.modes is not None:
        if ckpt.modes.shape != (space.N, space.K):
            raise CheckpointError("stored modes do not match the mode space")
        return ckpt.modes.copy()
    f = ckpt.field
    g = f.grid
    profile = f.bottom + g.x3[:, None, None] * (f.top - f.bottom)
    return space.restrict(f.values - profile)


def write_plane_means(path, field: ScalarField) -> Path:
    """CSV of the horizontal mean of each plane: ``plane, x3, mean``."""
    g = field.grid
    means = field.values.mean(axis=(1, 2))
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["plane", "x3", "mean"])
        for j, (z, v) in enumerate(zip(g.x3, means)):
            w.writerow([j, repr(float(z)), repr(float(v))])
    return path
