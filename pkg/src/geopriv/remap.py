"""Deterministic post-processing of mechanism outputs onto grid cells.

A remap ``R`` sends every output ``z`` of a base mechanism to a cell ``R(z)``.
The composed mechanism merges columns, ``k'[x, c] = sum_{z: R(z) = c} k[x, z]``,
and since a sum of columns each within ratio ``e^ell`` of each other stays
within that ratio, remapping never weakens ell-privacy.

Two strategies are provided:

* nearest: ``R(z)`` is the cell nearest to output ``z``;
* Bayesian: ``R(z)`` minimizes the posterior expected loss
  ``sum_x pi(x) k[x, z] L[x, c]`` over candidate cells ``c``.
"""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from geopriv.errors import ConfigError
from geopriv.grid import GeoGrid, nearest_cell
from geopriv.mechanism import DiscreteMechanism, as_matrix
from geopriv.priors import Prior


def remap_nearest(grid: GeoGrid, z):
    """Cell nearest to planar output ``z`` (a point or ``(n, 2)`` array)."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ConfigError("remap input must be finite")
    return nearest_cell(grid, z)


@dataclasses.dataclass(frozen=True)
class Nearest:
    """Map each output cell to the target cell containing its center."""


@dataclasses.dataclass(frozen=True)
class Bayesian:
    """Posterior expected-loss remap.

    Attributes:
        prior: prior over the base mechanism's inputs.
        loss_matrix: ``L[x, c]`` loss of answering cell ``c`` when the true
            input is ``x``.
        allowed: optional boolean mask of candidate cells; remaps never land
            on a masked-out cell (e.g. water).
    """

    prior: Prior
    loss_matrix: np.ndarray
    allowed: Optional[np.ndarray] = None


RemapStrategy = Union[Nearest, Bayesian]


@dataclasses.dataclass
class RemapTable:
    """``target[z]`` for every base output ``z``.

    ``fallback`` lists the outputs whose posterior had no mass and were sent
    to the nearest allowed cell instead.
    """

    target: np.ndarray
    fallback: List[int] = dataclasses.field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["z_index", "remapped_index"])
            for z, c in enumerate(self.target):
                w.writerow([z, int(c)])

    @classmethod
    def from_csv(cls, path) -> "RemapTable":
        with open(Path(path), newline="") as fh:
            rows = [(int(r["z_index"]), int(r["remapped_index"])) for r in csv.DictReader(fh)]
        target = np.empty(len(rows), dtype=int)
        for z, c in rows:
            target[z] = c
        return cls(target)


def _nearest_allowed(points: np.ndarray, grid: GeoGrid, allowed: Optional[np.ndarray]) -> np.ndarray:
    if allowed is None:
        return np.atleast_1d(nearest_cell(grid, points))
    cand = np.flatnonzero(allowed)
    if cand.size == 0:
        raise ConfigError("remap mask allows no cell")
    d2 = ((points[:, None, :] - grid.centers[cand][None, :, :]) ** 2).sum(axis=-1)
    return cand[np.argmin(d2, axis=1)]


def bayes_remap_table(base, prior, loss_matrix, output_points: np.ndarray, grid: GeoGrid,
                      allowed: Optional[np.ndarray] = None) -> RemapTable:
    """Bayesian remap of every output column of ``base``.

    Args:
        base: ``m x q`` mechanism (inputs by outputs).
        prior: prior over the ``m`` inputs.
        loss_matrix: ``m x n`` loss between inputs and the ``n`` target cells.
        output_points: ``q x 2`` planar location of each output, used for the
            nearest-cell fallback.
        grid: target grid of ``n`` cells.
        allowed: optional mask over the target cells.
    """
    k = as_matrix(base)
    pi = prior.weights if isinstance(prior, Prior) else np.asarray(prior, dtype=float)
    L = np.asarray(loss_matrix, dtype=float)
    if k.shape[0] != pi.size or L.shape[0] != pi.size or L.shape[1] != grid.n_cells:
        raise ConfigError(f"shape mismatch: base {k.shape}, prior {pi.size}, loss {L.shape}")
    rows = np.flatnonzero(pi)
    post = pi[rows, None] * k[rows]                      # m' x q, unnormalized posterior
    score = post.T @ L[rows]                             # q x n
    if allowed is not None:
        allowed = np.asarray(allowed, dtype=bool)
        score[:, ~allowed] = np.inf
    target = np.argmin(score, axis=1)                    # first minimum = lowest index
    empty = np.flatnonzero(post.sum(axis=0) <= 0)
    if empty.size:
        pts = np.asarray(output_points, dtype=float).reshape(-1, 2)[empty]
        target[empty] = _nearest_allowed(pts, grid, allowed)
    return RemapTable(target, empty.tolist())


def remap_bayes(base, prior, loss_matrix, z: int, output_points: np.ndarray, grid: GeoGrid,
                allowed: Optional[np.ndarray] = None) -> int:
    """Bayesian remap of a single output column ``z``."""
    k = as_matrix(base)[:, [z]]
    pts = np.asarray(output_points, dtype=float).reshape(-1, 2)[[z]]
    return int(bayes_remap_table(k, prior, loss_matrix, pts, grid, allowed).target[0])


def remap_table(base, strategy: RemapStrategy, grid: GeoGrid,
                output_points: Optional[np.ndarray] = None) -> RemapTable:
    """Remap table for ``strategy``; outputs default to ``grid``'s own centers."""
    pts = grid.centers if output_points is None else np.asarray(output_points, dtype=float)
    if isinstance(strategy, Nearest):
        return RemapTable(np.atleast_1d(nearest_cell(grid, pts)))
    if isinstance(strategy, Bayesian):
        return bayes_remap_table(base, strategy.prior, strategy.loss_matrix, pts, grid, strategy.allowed)
    raise ConfigError(f"unknown remap strategy {strategy!r}")


def apply_remap(base, target: np.ndarray, n_cells: int) -> DiscreteMechanism:
    """Merge the columns of ``base`` according to ``target``."""
    k = as_matrix(base)
    target = np.asarray(target, dtype=int)
    if target.size != k.shape[1]:
        raise ConfigError(f"remap table has {target.size} entries for {k.shape[1]} outputs")
    out = np.zeros((k.shape[0], n_cells))
    np.add.at(out.T, target, k.T)
    return DiscreteMechanism(out)


def remapped_mechanism(base, strategy: RemapStrategy, grid: GeoGrid,
                       output_points: Optional[np.ndarray] = None) -> DiscreteMechanism:
    """Compose ``base`` with the remap chosen by ``strategy``.

    Args:
        base: mechanism whose outputs are located at ``output_points``.
        strategy: :class:`Nearest` or :class:`Bayesian`.
        grid: target grid.
        output_points: planar locations of the base outputs; defaults to the
            target grid's centers (square base).
    """
    table = remap_table(base, strategy, grid, output_points)
    return apply_remap(base, table.target, grid.n_cells)
