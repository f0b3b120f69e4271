"""Check-in ingestion and per-user priors over grid cells.

Input rows follow the Gowalla check-in layout, five fields per line::

    user_id <TAB> timestamp (ISO-8601) <TAB> latitude <TAB> longitude <TAB> location_id

Comma-separated files are accepted too; the delimiter is taken from the first
line (tab wins when present).  Timestamps and location ids are carried but
not used.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from geopriv.errors import ConfigError, EmptyPriorError, IngestionError
from geopriv.grid import GeoGrid, nearest_cell
from geopriv.mechanism import as_matrix

PRIOR_SUM_TOL = 1e-12


@dataclasses.dataclass(frozen=True)
class CheckIn:
    user_id: int
    timestamp: str
    lat: float
    lon: float
    location_id: int


@dataclasses.dataclass
class ParseReport:
    parsed: int = 0
    malformed: List[Tuple[int, str]] = dataclasses.field(default_factory=list)


def _parse_row(fields):
    if len(fields) != 5:
        raise ValueError(f"expected 5 fields, got {len(fields)}")
    user, ts, lat, lon, loc = (f.strip() for f in fields)
    lat_f, lon_f = float(lat), float(lon)
    if not (-90.0 <= lat_f <= 90.0):
        raise ValueError(f"latitude {lat_f} out of range")
    if not (-180.0 <= lon_f <= 180.0):
        raise ValueError(f"longitude {lon_f} out of range")
    return CheckIn(int(user), ts, lat_f, lon_f, int(loc))


def parse_checkins(source: Union[str, Path, TextIO]) -> Tuple[List[CheckIn], ParseReport]:
    """Parse check-ins from a path or an open text stream.

    Malformed rows are skipped and listed in the report with 1-based line
    numbers.

    Raises:
        IngestionError: no row could be parsed.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return parse_checkins(fh)
    first = source.readline()
    if not first.strip():
        raise IngestionError("empty check-in input")
    delim = "\t" if "\t" in first else ","
    report = ParseReport()
    out = []
    stream = io.StringIO(first)
    lines = [stream, source]
    lineno = 0
    for part in lines:
        for fields in csv.reader(part, delimiter=delim):
            lineno += 1
            if not fields or all(not f.strip() for f in fields):
                continue
            try:
                out.append(_parse_row(fields))
            except ValueError as exc:
                report.malformed.append((lineno, str(exc)))
    report.parsed = len(out)
    if not out:
        raise IngestionError(f"no parseable check-ins ({len(report.malformed)} malformed rows)")
    return out, report


class Prior:
    """Probability distribution over the cells of a grid."""

    def __init__(self, weights, grid: Optional[GeoGrid] = None):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ConfigError("prior weights must be a non-negative vector")
        if grid is not None and w.size != grid.n_cells:
            raise ConfigError(f"prior has {w.size} weights for {grid.n_cells} cells")
        total = w.sum()
        if abs(total - 1.0) > PRIOR_SUM_TOL:
            if total <= 0:
                raise EmptyPriorError("prior has no mass")
            w = w / total
        self.weights = w
        self.grid = grid

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights)

    def __len__(self):
        return self.weights.size

    @classmethod
    def uniform(cls, grid: GeoGrid) -> "Prior":
        return cls(np.full(grid.n_cells, 1.0 / grid.n_cells), grid)

    @classmethod
    def point_mass(cls, grid: GeoGrid, cell: int) -> "Prior":
        w = np.zeros(grid.n_cells)
        w[cell] = 1.0
        return cls(w, grid)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell_index", "weight"])
            for i, v in enumerate(self.weights):
                w.writerow([i, repr(float(v))])

    @classmethod
    def from_csv(cls, path, grid: Optional[GeoGrid] = None) -> "Prior":
        with open(Path(path), newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"cell_index", "weight"} <= set(reader.fieldnames):
                raise ConfigError("prior CSV header must contain cell_index and weight")
            rows = [(int(r["cell_index"]), float(r["weight"])) for r in reader]
        n = grid.n_cells if grid is not None else max(i for i, _ in rows) + 1
        w = np.zeros(n)
        for i, v in rows:
            w[i] += v
        return cls(w, grid)


@dataclasses.dataclass(frozen=True)
class PriorStats:
    total: int
    in_region: int
    dropped: int

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2) + "\n")


def build_prior(checkins: Iterable[CheckIn], grid: GeoGrid, user_id: int) -> Tuple[Prior, PriorStats]:
    """Share of the user's in-region check-ins falling in each cell.

    Out-of-region check-ins are dropped and counted in the stats; duplicates
    count every time.
    """
    if grid.region is None:
        raise ConfigError("building a prior needs a grid with a lat/lon region")
    mine = [c for c in checkins if c.user_id == user_id]
    if not mine:
        raise EmptyPriorError(f"user {user_id} has no check-ins")
    lat = np.array([c.lat for c in mine])
    lon = np.array([c.lon for c in mine])
    inside = grid.region.contains(lat, lon)
    stats = PriorStats(len(mine), int(inside.sum()), int((~inside).sum()))
    if not inside.any():
        raise EmptyPriorError(f"user {user_id} has no check-ins inside the region")
    cells = nearest_cell(grid, grid.region.to_xy(lat[inside], lon[inside]))
    counts = np.bincount(np.atleast_1d(cells), minlength=grid.n_cells).astype(float)
    return Prior(counts / counts.sum(), grid), stats


def gaussian_mixture_prior(grid: GeoGrid, centers_km: Sequence[Sequence[float]],
                           sigmas_km: Sequence[float], weights: Optional[Sequence[float]] = None) -> Prior:
    """Deterministic prior from an isotropic Gaussian mixture at the cell centers."""
    centers = np.asarray(centers_km, dtype=float).reshape(-1, 2)
    sigmas = np.broadcast_to(np.asarray(sigmas_km, dtype=float), (centers.shape[0],))
    wts = np.ones(centers.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    if np.any(sigmas <= 0) or np.any(wts < 0):
        raise ConfigError("cluster sigmas must be positive and weights non-negative")
    pts = grid.centers
    dens = np.zeros(grid.n_cells)
    for c, s, w in zip(centers, sigmas, wts):
        d2 = ((pts - c) ** 2).sum(axis=1)
        dens += w * np.exp(-0.5 * d2 / s ** 2) / s ** 2
    if dens.sum() <= 0:
        raise EmptyPriorError("mixture puts no mass on the grid")
    return Prior(dens / dens.sum(), grid)


def expected_loss_discrete(mech, prior, loss_matrix) -> float:
    """``sum_x pi(x) sum_z k[x, z] L[x, z]``."""
    k = as_matrix(mech)
    pi = prior.weights if isinstance(prior, Prior) else np.asarray(prior, dtype=float)
    L = np.asarray(loss_matrix, dtype=float)
    if k.shape != L.shape or k.shape[0] != pi.size:
        raise ConfigError(f"dimension mismatch: mechanism {k.shape}, loss {L.shape}, prior {pi.size}")
    rows = np.flatnonzero(pi)
    return float(pi[rows] @ (k[rows] * L[rows]).sum(axis=1))
