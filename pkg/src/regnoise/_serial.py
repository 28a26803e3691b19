"""Flat binary and CSV serialization for grids, fields, and paths.

Binary layout (all little-endian):

    magic   4 bytes  b"RNLB"
    kind    u64      1 = ScalarField, 2 = SpaceTimeField, 3 = SamplePath
    header  kind-specific u64 dims followed by f64 grid parameters
    payload row-major float64

CSV files use a fixed header order and repr-exact floats so byte identity is
meaningful across reruns.
"""

from __future__ import annotations

import struct

import numpy as np

from .grids import ScalarField, SpaceGrid, SpaceTimeField, TimeGrid

MAGIC = b"RNLB"

_KIND_SCALAR = 1
_KIND_SPACETIME = 2
_KIND_PATH = 3


def _pack_u64(*vals) -> bytes:
    return struct.pack("<" + "Q" * len(vals), *vals)


def _pack_f64(*vals) -> bytes:
    return struct.pack("<" + "d" * len(vals), *vals)


def write_scalar_field(path, f: ScalarField) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_pack_u64(_KIND_SCALAR, f.grid.d, f.grid.m))
        fh.write(_pack_f64(f.grid.L))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def write_spacetime_field(path, f: SpaceTimeField) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_pack_u64(_KIND_SPACETIME, f.sgrid.d, f.sgrid.m,
                           f.components, f.tgrid.n))
        fh.write(_pack_f64(f.sgrid.L, f.tgrid.t0, f.tgrid.t1))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def write_path(path, times: np.ndarray, values: np.ndarray) -> None:
    v = np.atleast_2d(np.asarray(values, dtype=float).T).T  # (n+1, d)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_pack_u64(_KIND_PATH, v.shape[0], v.shape[1]))
        fh.write(np.ascontiguousarray(times, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def _read_header(fh, n_u64, n_f64):
    u = struct.unpack("<" + "Q" * n_u64, fh.read(8 * n_u64))
    f = struct.unpack("<" + "d" * n_f64, fh.read(8 * n_f64))
    return u, f


def read_field(path):
    """Read back a ScalarField / SpaceTimeField / (times, values) path."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a field file")
        (kind,) = struct.unpack("<Q", fh.read(8))
        if kind == _KIND_SCALAR:
            (d, m), (L,) = _read_header(fh, 2, 1)
            grid = SpaceGrid(L, int(m), int(d))
            vals = np.frombuffer(fh.read(), dtype="<f8").reshape(grid.shape)
            return ScalarField(grid, vals.copy())
        if kind == _KIND_SPACETIME:
            (d, m, comp, n), (L, t0, t1) = _read_header(fh, 4, 3)
            sgrid = SpaceGrid(L, int(m), int(d))
            tgrid = TimeGrid(t0, t1, int(n))
            shape = (int(n) + 1, int(comp)) + sgrid.shape
            vals = np.frombuffer(fh.read(), dtype="<f8").reshape(shape)
            return SpaceTimeField(tgrid, sgrid, vals.copy(), int(comp))
        if kind == _KIND_PATH:
            (npts, d), _ = _read_header(fh, 2, 0)
            raw = np.frombuffer(fh.read(), dtype="<f8")
            times = raw[: int(npts)].copy()
            vals = raw[int(npts):].reshape(int(npts), int(d)).copy()
            return times, vals
        raise ValueError(f"{path}: unknown kind {kind}")


def format_float(x: float) -> str:
    """Deterministic shortest round-trip float for CSV cells."""
    return repr(float(x))


def write_csv_path(path, times, values, components=None) -> None:
    v = np.atleast_2d(np.asarray(values, dtype=float).T).T
    d = v.shape[1]
    names = components or [f"x_{i + 1}" for i in range(d)]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["t"] + list(names)) + "\n")
        for i, t in enumerate(times):
            cells = [format_float(t)] + [format_float(v[i, j]) for j in range(d)]
            fh.write(",".join(cells) + "\n")
