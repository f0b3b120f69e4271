"""Rectangular regions, planar projection and uniform cell grids.

Coordinates are projected with an equirectangular projection about the
region's mid-latitude, with the origin at the south-west corner
``(lat_min, lon_min)``:

    x = R_earth * cos(lat_mid) * (lon - lon_min)   [radians]
    y = R_earth * (lat - lat_min)                   [radians]

Cells are indexed row-major from the south-west: ``index = row * cols + col``
with ``col`` growing eastward and ``row`` northward.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from scipy import integrate

from geopriv.errors import ConfigError

EARTH_RADIUS_KM = 6371.0

_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


@dataclasses.dataclass(frozen=True)
class Region:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ConfigError("region needs lat_min < lat_max and lon_min < lon_max")
        if not (-90 <= self.lat_min and self.lat_max <= 90):
            raise ConfigError("latitudes must lie in [-90, 90]")

    @property
    def _kx(self):
        mid = math.radians(0.5 * (self.lat_min + self.lat_max))
        return EARTH_RADIUS_KM * math.cos(mid) * math.pi / 180.0

    @property
    def _ky(self):
        return EARTH_RADIUS_KM * math.pi / 180.0

    @property
    def width_km(self) -> float:
        return self._kx * (self.lon_max - self.lon_min)

    @property
    def height_km(self) -> float:
        return self._ky * (self.lat_max - self.lat_min)

    def contains(self, lat, lon):
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        return ((lat >= self.lat_min) & (lat <= self.lat_max)
                & (lon >= self.lon_min) & (lon <= self.lon_max))

    def to_xy(self, lat, lon) -> np.ndarray:
        """Affine projection; valid (but not flagged) outside the region."""
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        return np.stack([self._kx * (lon - self.lon_min), self._ky * (lat - self.lat_min)], axis=-1)

    def to_latlon(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.stack([self.lat_min + xy[..., 1] / self._ky,
                         self.lon_min + xy[..., 0] / self._kx], axis=-1)


LOS_ANGELES = Region(33.9301, 34.1996, -118.5354, -118.1010)


class Projected(NamedTuple):
    xy: np.ndarray
    inside: np.ndarray


def project(region: Region, lat, lon) -> Projected:
    """Project degrees to planar km; ``inside`` flags points within the region.

    Out-of-region points are still projected; dropping or clamping them is the
    caller's decision.
    """
    return Projected(region.to_xy(lat, lon), region.contains(lat, lon))


def unproject(region: Region, xy) -> np.ndarray:
    """Inverse of :func:`project`; returns ``(..., 2)`` of (lat, lon)."""
    return region.to_latlon(xy)


@dataclasses.dataclass(frozen=True)
class GeoGrid:
    """Uniform ``cols x rows`` partition of a ``width x height`` km rectangle."""

    width: float
    height: float
    cols: int
    rows: int
    region: Optional[Region] = None

    def __post_init__(self):
        if int(self.cols) != self.cols or int(self.rows) != self.rows:
            raise ConfigError("grid dimensions must be integers")
        if self.cols < 1 or self.rows < 1:
            raise ConfigError("grid dimensions must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ConfigError("grid extent must be positive")

    @property
    def n_cells(self) -> int:
        return self.cols * self.rows

    @property
    def cell_width(self) -> float:
        return self.width / self.cols

    @property
    def cell_height(self) -> float:
        return self.height / self.rows

    @property
    def centers(self) -> np.ndarray:
        col = np.tile(np.arange(self.cols), self.rows)
        row = np.repeat(np.arange(self.rows), self.cols)
        return np.column_stack([(col + 0.5) * self.cell_width, (row + 0.5) * self.cell_height])

    def col_row(self, index):
        index = np.asarray(index)
        return index % self.cols, index // self.cols

    def to_config(self) -> dict:
        if self.region is None:
            return {"width_km": self.width, "height_km": self.height,
                    "cols": self.cols, "rows": self.rows}
        return {**dataclasses.asdict(self.region), "cols": self.cols, "rows": self.rows}

    @classmethod
    def from_config(cls, cfg: dict) -> "GeoGrid":
        """Build from ``{lat_min, lat_max, lon_min, lon_max, cols, rows}``.

        A planar grid may instead give ``width_km`` and ``height_km``.
        """
        try:
            if "width_km" in cfg:
                return cls(float(cfg["width_km"]), float(cfg["height_km"]),
                           int(cfg["cols"]), int(cfg["rows"]))
            region = Region(float(cfg["lat_min"]), float(cfg["lat_max"]),
                            float(cfg["lon_min"]), float(cfg["lon_max"]))
            return build_grid(region, int(cfg["cols"]), int(cfg["rows"]))
        except KeyError as exc:
            raise ConfigError(f"grid config missing field {exc}") from None


def build_grid(region: Region, cols: int, rows: int) -> GeoGrid:
    """Partition the projected region into ``cols x rows`` equal cells."""
    if cols < 1 or rows < 1:
        raise ConfigError("grid dimensions must be positive")
    return GeoGrid(region.width_km, region.height_km, cols, rows, region)


def load_grid(path) -> GeoGrid:
    with open(Path(path)) as fh:
        return GeoGrid.from_config(json.load(fh))


def nearest_cell(grid: GeoGrid, point):
    """Index of the nearest cell center; ties go to the lowest index.

    Works on a single ``(x, y)`` point or an ``(n, 2)`` array.  Points outside
    the grid snap to the nearest boundary cell.
    """
    p = np.asarray(point, dtype=float)
    # ceil(t) - 1 sends a point on a shared edge to the lower cell.
    col = np.clip(np.ceil(p[..., 0] / grid.cell_width) - 1, 0, grid.cols - 1).astype(int)
    row = np.clip(np.ceil(p[..., 1] / grid.cell_height) - 1, 0, grid.rows - 1).astype(int)
    idx = row * grid.cols + col
    return int(idx) if idx.ndim == 0 else idx


def cell_distance_matrix(grid: GeoGrid) -> np.ndarray:
    c = grid.centers
    diff = c[:, None, :] - c[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def save_matrix_csv(path, matrix: np.ndarray) -> None:
    """Square matrix as CSV with a header row of column indices."""
    matrix = np.asarray(matrix)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([""] + list(range(matrix.shape[1])))
        for i, row in enumerate(matrix):
            w.writerow([i] + [repr(float(v)) for v in row])


def load_matrix_csv(path) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ConfigError(f"{path}: empty matrix file")
        rows = [[float(v) for v in line[1:]] for line in reader if line]
    m = np.array(rows, dtype=float)
    if m.ndim != 2 or m.shape[1] != len(header) - 1:
        raise ConfigError(f"{path}: ragged matrix")
    return m


def mean_distance_to_center(width: float, height: Optional[float] = None) -> float:
    """Mean distance from a uniform point in a ``width x height`` cell to its center.

    Square cells use ``(a / 6) * (sqrt(2) + asinh(1))``; rectangles integrate
    numerically over one quadrant.
    """
    if height is None:
        height = width
    if width < 0 or height < 0:
        raise ConfigError("cell sides must be non-negative")
    if width == 0 or height == 0:
        return 0.0 if width == height else _segment_mean(max(width, height))
    if math.isclose(width, height, rel_tol=1e-12):
        return width / 6.0 * (math.sqrt(2.0) + math.asinh(1.0))
    return mean_distance_quadrature(width, height)


def _segment_mean(length):
    return length / 4.0


def mean_distance_quadrature(width: float, height: float) -> float:
    hw, hh = width / 2.0, height / 2.0
    val, _ = integrate.dblquad(lambda y, x: math.hypot(x, y), 0.0, hw, 0.0, hh,
                               epsabs=1e-12, epsrel=1e-12)
    return val / (hw * hh)


def grid_mean_distance_to_center(grid: GeoGrid) -> float:
    return mean_distance_to_center(grid.cell_width, grid.cell_height)


def cell_average_distance_matrix(grid: GeoGrid) -> np.ndarray:
    """``M[x, z]``: mean distance from a uniform point of cell ``x`` to center ``z``.

    This is the loss of reporting center ``z`` when the user may be anywhere in
    cell ``x``.  The diagonal equals :func:`grid_mean_distance_to_center`.
    """
    w, h = grid.cell_width, grid.cell_height
    u = 0.5 * w * _GL_X
    v = 0.5 * h * _GL_X
    wts = np.outer(_GL_W, _GL_W) / 4.0
    table = np.empty((grid.cols, grid.rows))
    for i in range(grid.cols):
        for j in range(grid.rows):
            dx = i * w + u[:, None]
            dy = j * h + v[None, :]
            table[i, j] = float((np.hypot(dx, dy) * wts).sum())
    table[0, 0] = grid_mean_distance_to_center(grid)
    col, row = grid.col_row(np.arange(grid.n_cells))
    di = np.abs(col[:, None] - col[None, :])
    dj = np.abs(row[:, None] - row[None, :])
    return table[di, dj]
