"""Diagnostics CSV and binary field snapshots.

Snapshot layout (little-endian), 80-byte header then payload::

    0   4s   magic b"KVHB"
    4   u32  format version
    8   u32  nq
    12  u32  np
    16  u32  n_levels
    20  4f8  q_min, q_max, p_min, p_max
    52  f8   hbar
    60  f8   t
    68  u32  payload kind
    72  8x   zero padding

Payload kinds and their arrays, each written C-ordered in sequence:

    1  real scalar field        f8 (nq, np)
    2  complex scalar field     c16 (nq, np)
    3  hybrid wavefunction      c16 (n, nq, np)
    4  matrix density           c16 (n, n, nq, np)
    5  spin state               f8 (nq, np) then f8 (3, nq, np)
    6  mean-field state         f8 (nq, np) then c16 (n, n)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .dynamics import DiagnosticsRecord
from .phasespace import PhaseSpaceGrid
from .spin2 import SpinState

MAGIC = b"KVHB"
VERSION = 1
HEADER_SIZE = 80
_HEADER = struct.Struct("<4sIIII4dddI8x")
assert _HEADER.size == HEADER_SIZE

KIND_REAL, KIND_COMPLEX, KIND_HYBRID, KIND_MATRIX, KIND_SPIN, KIND_MEANFIELD = 1, 2, 3, 4, 5, 6


class SnapshotFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SnapshotHeader:
    nq: int
    np: int
    n_levels: int
    extents: tuple[float, float, float, float]
    hbar: float
    t: float
    kind: int
    version: int = VERSION

    def pack(self) -> bytes:
        return _HEADER.pack(MAGIC, self.version, self.nq, self.np, self.n_levels, *self.extents,
                            self.hbar, self.t, self.kind)

    @classmethod
    def unpack(cls, raw: bytes) -> "SnapshotHeader":
        if len(raw) < HEADER_SIZE:
            raise SnapshotFormatError(f"header truncated: {len(raw)} bytes")
        magic, version, nq, np_, n, q0, q1, p0, p1, hbar, t, kind = _HEADER.unpack(raw[:HEADER_SIZE])
        if magic != MAGIC:
            raise SnapshotFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise SnapshotFormatError(f"unsupported version {version}")
        if raw[72:HEADER_SIZE] != bytes(8):
            raise SnapshotFormatError("nonzero header padding")
        return cls(nq, np_, n, (q0, q1, p0, p1), hbar, t, kind, version)

    def payload_shapes(self) -> list[tuple[tuple[int, ...], str]]:
        g, n = (self.nq, self.np), self.n_levels
        shapes = {
            KIND_REAL: [(g, "<f8")],
            KIND_COMPLEX: [(g, "<c16")],
            KIND_HYBRID: [((n,) + g, "<c16")],
            KIND_MATRIX: [((n, n) + g, "<c16")],
            KIND_SPIN: [(g, "<f8"), ((3,) + g, "<f8")],
            KIND_MEANFIELD: [(g, "<f8"), ((n, n), "<c16")],
        }
        if self.kind not in shapes:
            raise SnapshotFormatError(f"unknown payload kind {self.kind}")
        return shapes[self.kind]

    def payload_size(self) -> int:
        return sum(math.prod(s) * np.dtype(d).itemsize for s, d in self.payload_shapes())


def _classify(state) -> tuple[int, int, list[np.ndarray]]:
    if isinstance(state, SpinState):
        return KIND_SPIN, 2, [np.asarray(state.D), np.asarray(state.s)]
    if isinstance(state, tuple):
        D, rho = state
        return KIND_MEANFIELD, np.shape(rho)[0], [np.asarray(D), np.asarray(rho)]
    a = np.asarray(state)
    if a.ndim == 2:
        return (KIND_COMPLEX if np.iscomplexobj(a) else KIND_REAL), 1, [a]
    if a.ndim == 3:
        return KIND_HYBRID, a.shape[0], [a]
    if a.ndim == 4:
        return KIND_MATRIX, a.shape[0], [a]
    raise SnapshotFormatError(f"cannot serialize array of shape {a.shape}")


def encode_snapshot(state, grid: PhaseSpaceGrid, hbar: float, t: float) -> bytes:
    kind, n, arrays = _classify(state)
    header = SnapshotHeader(grid.nq, grid.np, n, grid.extents, float(hbar), float(t), kind)
    chunks = [header.pack()]
    for arr, (shape, dtype) in zip(arrays, header.payload_shapes()):
        if arr.shape != shape:
            raise SnapshotFormatError(f"array shape {arr.shape} does not match header shape {shape}")
        chunks.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    return b"".join(chunks)


def decode_snapshot(raw: bytes) -> tuple[SnapshotHeader, object]:
    header = SnapshotHeader.unpack(raw)
    expected = HEADER_SIZE + header.payload_size()
    if len(raw) != expected:
        raise SnapshotFormatError(f"snapshot has {len(raw)} bytes, header implies {expected}")
    offset, arrays = HEADER_SIZE, []
    for shape, dtype in header.payload_shapes():
        size = math.prod(shape) * np.dtype(dtype).itemsize
        arrays.append(np.frombuffer(raw, dtype=dtype, count=math.prod(shape), offset=offset).reshape(shape).copy())
        offset += size
    if header.kind == KIND_SPIN:
        return header, SpinState(arrays[0], arrays[1])
    if header.kind == KIND_MEANFIELD:
        return header, (arrays[0], arrays[1])
    return header, arrays[0]


def write_snapshot(path: str | Path, state, grid: PhaseSpaceGrid, hbar: float, t: float) -> None:
    Path(path).write_bytes(encode_snapshot(state, grid, hbar, t))


def read_snapshot(path: str | Path) -> tuple[SnapshotHeader, object]:
    return decode_snapshot(Path(path).read_bytes())


def grid_from_header(header: SnapshotHeader, dealias: bool = True) -> PhaseSpaceGrid:
    return PhaseSpaceGrid(header.nq, header.np, *header.extents, dealias=dealias)


# -- diagnostics CSV -------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return "nan"
    return "%.17g" % float(x)


class DiagnosticsWriter:
    """Streams records as CSV: ``t,energy,mass,min_D,purity,<casimirs>,<residuals>``.

    Columns are fixed by the first record; later records missing a column get ``nan``.
    A trailing ``berry_flux`` column appears only when the first record carries one.
    """

    BASE = ("t", "energy", "mass", "min_D", "purity")

    def __init__(self, stream: IO[str]):
        self.stream = stream
        self.casimir_cols: list[str] | None = None
        self.residual_cols: list[str] = []
        self.with_berry = False

    def header(self) -> list[str]:
        extra = ["berry_flux"] if self.with_berry else []
        return list(self.BASE) + list(self.casimir_cols or []) + self.residual_cols + extra

    def write(self, rec: DiagnosticsRecord) -> None:
        if self.casimir_cols is None:
            self.casimir_cols = list(rec.casimirs)
            self.residual_cols = list(rec.residuals)
            self.with_berry = rec.berry_flux is not None
            self.stream.write(",".join(self.header()) + "\n")
        row = [rec.t, rec.energy, rec.mass, rec.min_D, rec.purity]
        row += [rec.casimirs.get(c, math.nan) for c in self.casimir_cols]
        row += [rec.residuals.get(c, math.nan) for c in self.residual_cols]
        if self.with_berry:
            row.append(rec.berry_flux)
        self.stream.write(",".join(_fmt(x) for x in row) + "\n")
        self.stream.flush()


def write_diagnostics(path: str | Path, records: Iterable[DiagnosticsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = DiagnosticsWriter(fh)
        for rec in records:
            w.write(rec)


def read_diagnostics(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        cols = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return cols, data


def write_table(path: str | Path, rows: Sequence[dict[str, float]]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    cols = list(rows[0])
    lines = [",".join(cols)] + [",".join(_fmt(r[c]) for c in cols) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")
