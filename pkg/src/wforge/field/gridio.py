"""Grid export in the WFG1 binary layout and a plot-friendly CSV variant.

Binary layout, little endian::

    offset  size  field
    0       4     magic  b"WFG1"
    4       4     nx     uint32, samples along x1
    8       4     ny     uint32, samples along x2
    12      8     x-range  two float32 (x0, x1)
    20      8     y-range  two float32 (y0, y1)
    28      4     reserved uint32, zero
    32      ...   ny * nx float64 values, row-major (row = fixed x2)
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"WFG1"
HEADER = struct.Struct("<4sII4fI")
assert HEADER.size == 32


@dataclass(frozen=True)
class Grid:
    values: np.ndarray
    x_range: tuple[float, float]
    y_range: tuple[float, float]

    @property
    def shape(self):
        return self.values.shape

    def axes(self):
        ny, nx = self.values.shape
        return (np.linspace(self.x_range[0], self.x_range[1], nx),
                np.linspace(self.y_range[0], self.y_range[1], ny))


def write_grid(path, values, x_range, y_range) -> Path:
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.ndim != 2:
        raise ValueError("grid values must be two-dimensional")
    ny, nx = values.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, nx, ny, float(x_range[0]), float(x_range[1]),
                             float(y_range[0]), float(y_range[1]), 0))
        fh.write(values.tobytes())
    return path


def read_grid(path) -> Grid:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: missing grid file") from exc
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: header truncated ({len(raw)} of {HEADER.size} bytes)")
    magic, nx, ny, x0, x1, y0, y1, _ = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if nx < 1:
        raise FormatError(f"{path}: header field nx = {nx} is invalid")
    if ny < 1:
        raise FormatError(f"{path}: header field ny = {ny} is invalid")
    if not (x0 < x1 or nx == 1):
        raise FormatError(f"{path}: header field x-range ({x0}, {x1}) is invalid")
    if not (y0 < y1 or ny == 1):
        raise FormatError(f"{path}: header field y-range ({y0}, {y1}) is invalid")
    need = HEADER.size + 8 * nx * ny
    if len(raw) != need:
        raise FormatError(f"{path}: payload size {len(raw) - HEADER.size} bytes does not match "
                          f"header fields nx = {nx}, ny = {ny} ({8 * nx * ny} bytes)")
    values = np.frombuffer(raw, dtype="<f8", offset=HEADER.size).reshape(ny, nx).copy()
    return Grid(values, (float(x0), float(x1)), (float(y0), float(y1)))


def write_grid_csv(path, values, x_range, y_range) -> Path:
    grid = Grid(np.asarray(values, dtype=float), tuple(x_range), tuple(y_range))
    xs, ys = grid.axes()
    path = Path(path)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["x", "y", "value"])
        for j, y in enumerate(ys):
            for i, x in enumerate(xs):
                out.writerow([repr(float(x)), repr(float(y)), repr(float(grid.values[j, i]))])
    return path
