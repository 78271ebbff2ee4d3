"""Cartesian grid over the vehicle state (periodic heading axis), first-order
one-sided differences with linear-extrapolation ghost values, multilinear
interpolation, and flat-binary field snapshots."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np


class ExtrapolationError(ValueError):
    """A query point lies outside the non-periodic extent of the grid."""


@dataclass(frozen=True)
class Axis:
    lo: float
    hi: float
    n: int
    periodic: bool = False

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"axis needs at least 3 points, got {self.n}")
        if not self.hi > self.lo:
            raise ValueError(f"axis extent [{self.lo}, {self.hi}] is empty")

    @property
    def spacing(self) -> float:
        # a periodic axis covers [lo, hi) with n cells and no duplicated seam
        span = self.hi - self.lo
        return span / self.n if self.periodic else span / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.lo + self.spacing * np.arange(self.n)


@dataclass(frozen=True)
class GridSpec:
    axes: tuple

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(ax.n for ax in self.axes)

    @property
    def spacings(self) -> np.ndarray:
        return np.array([ax.spacing for ax in self.axes])

    def mesh(self) -> np.ndarray:
        """Node coordinates, shape grid.shape + (ndim,)."""
        grids = np.meshgrid(*[ax.nodes for ax in self.axes], indexing="ij")
        return np.stack(grids, axis=-1)

    @classmethod
    def vehicle_plane(cls, x_extent, y_extent, nx: int, ny: int, npsi: int) -> "GridSpec":
        """Grid over (X, Y, psi) with the heading axis spanning exactly [-pi, pi)."""
        return cls(
            (
                Axis(float(x_extent[0]), float(x_extent[1]), nx),
                Axis(float(y_extent[0]), float(y_extent[1]), ny),
                Axis(-math.pi, math.pi, npsi, periodic=True),
            )
        )

    def to_dict(self) -> dict:
        return {
            "axes": [
                {"lo": ax.lo, "hi": ax.hi, "n": ax.n, "periodic": ax.periodic}
                for ax in self.axes
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        return cls(
            tuple(
                Axis(float(a["lo"]), float(a["hi"]), int(a["n"]), bool(a["periodic"]))
                for a in data["axes"]
            )
        )


def backward_difference(
    values: np.ndarray, grid: GridSpec, axis: int, boundary: str = "extrapolate"
) -> np.ndarray:
    """Left-biased first difference along a grid axis.

    Values may carry trailing component axes. On a non-periodic boundary the
    missing neighbor is linearly extrapolated ("extrapolate", which reduces to
    copying the interior one-sided slope) or held ("clamp", zero slope; keeps
    every difference a combination of stored values, which matters for fields
    whose entries must remain a definite matrix).
    """
    ax = grid.axes[axis]
    h = ax.spacing
    if ax.periodic:
        return (values - np.roll(values, 1, axis=axis)) / h
    out = np.empty_like(values)
    src = np.diff(values, axis=axis) / h
    first = [slice(None)] * values.ndim
    first[axis] = slice(1, None)
    out[tuple(first)] = src
    lead = [slice(None)] * values.ndim
    lead[axis] = slice(0, 1)
    if boundary == "clamp":
        out[tuple(lead)] = 0.0
    else:
        out[tuple(lead)] = np.take(src, [0], axis=axis)
    return out


def forward_difference(
    values: np.ndarray, grid: GridSpec, axis: int, boundary: str = "extrapolate"
) -> np.ndarray:
    """Right-biased first difference along a grid axis (see backward_difference)."""
    ax = grid.axes[axis]
    h = ax.spacing
    if ax.periodic:
        return (np.roll(values, -1, axis=axis) - values) / h
    out = np.empty_like(values)
    src = np.diff(values, axis=axis) / h
    head = [slice(None)] * values.ndim
    head[axis] = slice(0, -1)
    out[tuple(head)] = src
    tail = [slice(None)] * values.ndim
    tail[axis] = slice(-1, None)
    if boundary == "clamp":
        out[tuple(tail)] = 0.0
    else:
        out[tuple(tail)] = np.take(src, [-1], axis=axis)
    return out


def upwind_gradients(values: np.ndarray, grid: GridSpec):
    """(left-biased, right-biased) one-sided gradients for every grid axis."""
    minus = [backward_difference(values, grid, i) for i in range(grid.ndim)]
    plus = [forward_difference(values, grid, i) for i in range(grid.ndim)]
    return minus, plus


@dataclass
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def interp(self, point) -> float:
        return float(interpolate(self.values, self.grid, point))


@dataclass
class VectorField:
    grid: GridSpec
    values: np.ndarray  # grid.shape + (m,)

    def interp(self, point) -> np.ndarray:
        return interpolate(self.values, self.grid, point)


def _locate(ax: Axis, coord: float):
    """Cell index and fraction along one axis; wraps periodic coordinates."""
    h = ax.spacing
    if ax.periodic:
        u = (coord - ax.lo) / h
        base = math.floor(u)
        frac = u - base
        i0 = base % ax.n
        i1 = (i0 + 1) % ax.n
        return i0, i1, frac
    tol = 1e-9 * max(1.0, abs(ax.hi - ax.lo))
    if coord < ax.lo - tol or coord > ax.hi + tol:
        raise ExtrapolationError(
            f"coordinate {coord} outside grid extent [{ax.lo}, {ax.hi}]"
        )
    u = min(max((coord - ax.lo) / h, 0.0), ax.n - 1.0)
    i0 = min(int(math.floor(u)), ax.n - 2)
    return i0, i0 + 1, u - i0


def interpolate(values: np.ndarray, grid: GridSpec, point) -> np.ndarray:
    """Multilinear interpolation at one point; exact on multilinear fields.

    Trailing component axes of values are carried through. The heading axis
    wraps; leaving the planar extent raises ExtrapolationError.
    """
    point = np.asarray(point, dtype=float)
    if point.shape != (grid.ndim,):
        raise ValueError(f"expected a point of dimension {grid.ndim}, got {point.shape}")
    cells = [_locate(ax, float(point[i])) for i, ax in enumerate(grid.axes)]
    out = 0.0
    for corner in itertools.product((0, 1), repeat=grid.ndim):
        weight = 1.0
        idx = []
        for (i0, i1, frac), side in zip(cells, corner):
            weight *= frac if side else 1.0 - frac
            idx.append(i1 if side else i0)
        if weight:
            out = out + weight * values[tuple(idx)]
    return out


def save_array(path, arr: np.ndarray) -> None:
    """Write row-major float64 little-endian flat binary."""
    np.ascontiguousarray(arr, dtype="<f8").tofile(path)


def load_array(path, shape) -> np.ndarray:
    arr = np.fromfile(path, dtype="<f8")
    return arr.reshape(shape)


def write_manifest(path, payload: dict) -> None:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
