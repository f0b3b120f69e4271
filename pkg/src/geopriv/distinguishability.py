"""Distinguishability functions ell(d) and the structural predicates on them.

A distinguishability function bounds the log-ratio of output probabilities
for two inputs at distance ``d``.  Three families are provided:

* :class:`Linear` -- ``ell(d) = epsilon * d`` (epsilon-geo-indistinguishability)
* :class:`DRestricted` -- level ``epsilon`` up to ``D`` and ``+inf`` beyond
* :class:`Tabulated` -- piecewise-linear through samples, flat past the ends

``+inf`` is the IEEE infinity (``math.inf``); it absorbs additions and
compares above every finite level, so a constraint at infinite distinguishability
is exactly vacuous.

Regularity and super-additivity quantify over uncountable sets, so the
predicates here are sampled checks over a documented, deterministic probe set.
For the closed-form families the properties can be settled by hand:

* Linear is regular because ``eps*|a-c| <= eps*|a-b| + eps*|b-c|`` and
  super-additive with equality at every ``d0``.
* DRestricted satisfies super-additivity at ``d0 = D`` because every
  ``ell(D + d)`` is infinite.  It is *not* regular in general: three collinear
  points spaced ``0.6 D`` apart give ``ell(1.2 D) = inf`` on the left but a
  finite ``2 * epsilon`` on the right.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.stats import qmc

from geopriv.errors import ConfigError, DomainError, UnsupportedError

PREDICATE_TOL = 1e-9

ArrayLike = Union[float, np.ndarray]


class DistinguishabilityFn:
    """Base class; subclasses implement :meth:`_levels` on a float array."""

    def __call__(self, d: ArrayLike) -> ArrayLike:
        arr = np.asarray(d, dtype=float)
        if np.any(arr < 0) or np.any(np.isnan(arr)):
            raise DomainError("distance must be non-negative")
        out = self._levels(arr)
        if out.ndim == 0:
            return float(out)
        return out

    def _levels(self, d: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def is_monotone(self) -> bool:
        return True


@dataclasses.dataclass(frozen=True)
class Linear(DistinguishabilityFn):
    """``ell(d) = epsilon * d`` with epsilon in inverse distance units."""

    epsilon: float

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise DomainError(f"epsilon must be non-negative, got {self.epsilon}")

    def _levels(self, d):
        return self.epsilon * d


@dataclasses.dataclass(frozen=True)
class DRestricted(DistinguishabilityFn):
    """Level ``epsilon`` for ``d <= D`` and ``+inf`` for ``d > D``."""

    epsilon: float
    D: float

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise DomainError("epsilon must be non-negative")
        if not self.D > 0:
            raise DomainError("D must be positive")

    def _levels(self, d):
        return np.where(d <= self.D, self.epsilon, math.inf)


@dataclasses.dataclass(frozen=True)
class Tabulated(DistinguishabilityFn):
    """Linear interpolation through ``(distance, level)`` samples.

    Outside the sampled range the nearest end level is held constant.
    """

    distances: tuple
    levels: tuple

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=float)
        lv = np.asarray(self.levels, dtype=float)
        if d.ndim != 1 or d.shape != lv.shape or d.size == 0:
            raise ConfigError("distances and levels must be equal-length 1-D sequences")
        if np.any(np.diff(d) <= 0):
            raise ConfigError("tabulated distances must be strictly increasing")
        if np.any(d < 0) or np.any(lv < 0):
            raise ConfigError("tabulated distances and levels must be non-negative")
        object.__setattr__(self, "distances", tuple(d.tolist()))
        object.__setattr__(self, "levels", tuple(lv.tolist()))

    def _levels(self, d):
        return np.interp(d, self.distances, self.levels)

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.levels) >= 0))

    @classmethod
    def from_csv(cls, path) -> "Tabulated":
        """Load a two-column CSV with header ``distance_km,level``."""
        with open(Path(path), newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"distance_km", "level"} <= set(reader.fieldnames):
                raise ConfigError("CSV header must contain distance_km and level")
            rows = [(float(r["distance_km"]), float(r["level"])) for r in reader]
        if not rows:
            raise ConfigError(f"{path}: no samples")
        d, lv = zip(*rows)
        return cls(d, lv)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["distance_km", "level"])
            for d, lv in zip(self.distances, self.levels):
                w.writerow([repr(d), repr(lv)])


def evaluate(ell: DistinguishabilityFn, d: ArrayLike) -> ArrayLike:
    """Return ``ell(d)``; raises :class:`DomainError` for negative ``d``."""
    return ell(d)


@dataclasses.dataclass(frozen=True)
class ProbeConfig:
    """Finite probe sets for the sampled predicates.

    Attributes:
        triples: array of shape (N, 3, 2) of planar points (v1, v2, v3) in km.
        distances: 1-D array of positive distances in km.
    """

    triples: Optional[np.ndarray] = None
    distances: Optional[np.ndarray] = None

    @classmethod
    def default(cls) -> "ProbeConfig":
        return cls(triples=default_triples(), distances=default_distances())


def default_triples(n: int = 10_000, box: float = 100.0) -> np.ndarray:
    """Deterministic multi-scale triples from an unscrambled Halton sequence.

    ``v1`` is spread over a ``box`` x ``box`` square; the two legs
    ``v1 -> v2`` and ``v2 -> v3`` have log-uniform lengths in
    ``[1e-3, box]`` km.  Every other triple is collinear (second leg continues
    the first), which is where triangle-type inequalities are tightest.
    """
    u = qmc.Halton(d=6, scramble=False).random(n + 1)[1:]
    v1 = box * u[:, 0:2]
    s12 = 10.0 ** (-3.0 + np.log10(box * 1e3) * u[:, 2])
    s23 = 10.0 ** (-3.0 + np.log10(box * 1e3) * u[:, 4])
    a = 2 * np.pi * u[:, 3]
    b = 2 * np.pi * u[:, 5]
    b[::2] = a[::2]
    v2 = v1 + s12[:, None] * np.column_stack([np.cos(a), np.sin(a)])
    v3 = v2 + s23[:, None] * np.column_stack([np.cos(b), np.sin(b)])
    return np.stack([v1, v2, v3], axis=1)


def default_distances(n: int = 10_000) -> np.ndarray:
    return np.geomspace(1e-6, 1e3, n)


@dataclasses.dataclass(frozen=True)
class PredicateResult:
    """Outcome of a sampled predicate; truthy iff the predicate held."""

    holds: bool
    counterexample: object = None

    def __bool__(self):
        return self.holds


def is_regular(ell: DistinguishabilityFn, probe: Optional[ProbeConfig] = None,
               tol: float = PREDICATE_TOL) -> PredicateResult:
    """Sampled check of ``ell(|v1-v3|) <= ell(|v1-v2|) + ell(|v2-v3|)``.

    Returns the first violating triple (as a (3, 2) array) on failure.
    """
    triples = (probe or ProbeConfig.default()).triples
    if triples is None:
        triples = default_triples()
    triples = np.asarray(triples, dtype=float)
    if triples.size == 0:
        raise ConfigError("empty probe set")
    if triples.ndim != 3 or triples.shape[1:] != (3, 2):
        raise ConfigError("triples must have shape (N, 3, 2)")
    v1, v2, v3 = triples[:, 0], triples[:, 1], triples[:, 2]
    lhs = ell(np.linalg.norm(v1 - v3, axis=1))
    rhs = ell(np.linalg.norm(v1 - v2, axis=1)) + ell(np.linalg.norm(v2 - v3, axis=1))
    with np.errstate(invalid="ignore"):
        bad = ~(lhs <= rhs + tol)
    if bad.any():
        return PredicateResult(False, triples[np.argmax(bad)])
    return PredicateResult(True)


def satisfies_superadditivity_at(ell: DistinguishabilityFn, d0: float,
                                 probe: Optional[ProbeConfig] = None,
                                 tol: float = PREDICATE_TOL) -> PredicateResult:
    """Sampled check of ``ell(d0 + d) >= ell(d0) + ell(d)`` over probed ``d > 0``.

    Returns the first violating ``d`` on failure.
    """
    if not d0 > 0:
        raise DomainError("d0 must be positive")
    ds = (probe or ProbeConfig.default()).distances
    if ds is None:
        ds = default_distances()
    ds = np.asarray(ds, dtype=float)
    if ds.size == 0:
        raise ConfigError("empty probe set")
    if np.any(ds <= 0):
        raise ConfigError("probe distances must be positive")
    lhs = ell(d0 + ds)
    rhs = ell(d0) + ell(ds)
    with np.errstate(invalid="ignore"):
        bad = ~(lhs >= rhs - tol)
    if bad.any():
        return PredicateResult(False, float(ds[np.argmax(bad)]))
    return PredicateResult(True)


def minimal_distinguishability(ell: DistinguishabilityFn, r: ArrayLike,
                               r_prime: ArrayLike) -> ArrayLike:
    """Tightest budget between noise magnitudes ``r`` and ``r_prime`` on the plane.

    For a non-decreasing ``ell`` over the whole plane this is ``ell(|r - r'|)``.
    """
    if not ell.is_monotone():
        raise UnsupportedError(
            "minimal distinguishability is only implemented for non-decreasing ell")
    r = np.asarray(r, dtype=float)
    r_prime = np.asarray(r_prime, dtype=float)
    if np.any(r < 0) or np.any(r_prime < 0):
        raise DomainError("noise magnitudes must be non-negative")
    return ell(np.abs(r - r_prime))
