"""Circular noise functions described by their radial density.

A circular noise function assigns the same density to every noise vector of a
given magnitude, so it is fully described by its radial ``R(r)`` (km^-2).
Probabilities and expected losses reduce to one-dimensional integrals with the
``2*pi*r`` ring weight::

    total mass     = int_0^inf R(r) 2 pi r dr            (must be 1)
    expected loss  = int_0^inf R(r) L(r) 2 pi r dr
    tail P(> r)    = int_r^inf R(s) 2 pi s ds

Integration runs over ``[0, support]`` (adaptive Gauss-Kronrod for analytic
radials, exact-for-polynomials Gauss-Legendre per segment for tabulated ones)
plus an optional exponential tail ``A * exp(-rate * (r - support))`` beyond the
support.  Without a tail the density is taken to be zero past the support.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import warnings
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from geopriv.distinguishability import DistinguishabilityFn, Linear, minimal_distinguishability
from geopriv.errors import ConfigError, DomainError, NumericError

NORMALIZATION_TOL = 1e-6
PRIVACY_REL_TOL = 1e-9
TIGHTNESS_TOL = 1e-9

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


# ---------------------------------------------------------------- losses

class LossFn:
    """Loss as a function of noise magnitude (km)."""

    breakpoints: tuple = ()

    def __call__(self, r):
        raise NotImplementedError

    def is_nondecreasing(self) -> bool:
        return True


@dataclasses.dataclass(frozen=True)
class LinearLoss(LossFn):
    def __call__(self, r):
        return np.asarray(r, dtype=float)


@dataclasses.dataclass(frozen=True)
class StepLoss(LossFn):
    """Zero below ``threshold`` km and one at or above it."""

    threshold: float

    def __post_init__(self):
        if self.threshold < 0:
            raise DomainError("threshold must be non-negative")

    @property
    def breakpoints(self):
        return (self.threshold,)

    def __call__(self, r):
        return (np.asarray(r, dtype=float) >= self.threshold).astype(float)


@dataclasses.dataclass(frozen=True)
class TabulatedLoss(LossFn):
    """Piecewise-linear loss through ``(distance, value)`` samples, flat beyond."""

    distances: tuple
    values: tuple

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if d.ndim != 1 or d.shape != v.shape or d.size == 0:
            raise ConfigError("distances and values must be equal-length 1-D sequences")
        if np.any(np.diff(d) <= 0):
            raise ConfigError("loss sample distances must be strictly increasing")
        if np.any(v < 0):
            raise ConfigError("loss values must be non-negative")
        object.__setattr__(self, "distances", tuple(d.tolist()))
        object.__setattr__(self, "values", tuple(v.tolist()))

    @property
    def breakpoints(self):
        return self.distances

    def __call__(self, r):
        return np.interp(np.asarray(r, dtype=float), self.distances, self.values)

    def is_nondecreasing(self):
        return bool(np.all(np.diff(self.values) >= 0))


_ONE = TabulatedLoss((0.0,), (1.0,))


# ---------------------------------------------------------------- radials

class Radial:
    """Radial density of a circular noise function.

    Use :meth:`analytic` or :meth:`tabulated` to construct one.

    Attributes:
        support: radius (km) up to which the density is integrated directly.
        tail: ``(amplitude, rate)`` of the exponential continuation past
            ``support``, or None for zero density there.
        breakpoints: radii where the density has kinks or jumps.
    """

    def __init__(self, density: Callable, support: float, tail=None,
                 breakpoints: Sequence[float] = (), samples=None):
        if not support > 0:
            raise ConfigError("support must be positive")
        self._density = density
        self.support = float(support)
        self.tail = tail
        self.breakpoints = tuple(float(b) for b in breakpoints)
        self.samples = samples

    @classmethod
    def analytic(cls, density: Callable, support_hint: float, tail=None,
                 breakpoints: Sequence[float] = ()) -> "Radial":
        """Radial given by a vectorised evaluator.

        Args:
            density: ``r -> R(r)`` accepting numpy arrays.
            support_hint: truncation radius for direct quadrature.
            tail: None (no tail), ``"fit"`` (log-linear fit over the last 10%
                of the support) or an explicit decay rate in km^-1.
        """
        amp_rate = None
        if tail is not None:
            if tail == "fit":
                rs = np.linspace(0.9 * support_hint, support_hint, 64)
                amp_rate = _fit_tail(rs, density(rs), support_hint)
            else:
                amp_rate = (float(density(np.asarray(support_hint))), float(tail))
        return cls(density, support_hint, amp_rate, breakpoints)

    @classmethod
    def tabulated(cls, r: Sequence[float], density: Sequence[float], tail=None) -> "Radial":
        """Radial interpolated linearly through samples.

        Args:
            r: strictly increasing radii starting at 0.
            density: non-negative density at each radius.
            tail: None (zero past the last sample), ``"fit"`` (rate from the
                last 10% of samples) or an explicit decay rate; the last sample
                is the amplitude anchor.
        """
        r = np.asarray(r, dtype=float)
        dens = np.asarray(density, dtype=float)
        if r.ndim != 1 or r.shape != dens.shape or r.size < 2:
            raise ConfigError("need at least two (r, density) samples")
        if r[0] != 0 or np.any(np.diff(r) <= 0):
            raise ConfigError("radii must start at 0 and be strictly increasing")
        if np.any(dens < 0):
            raise DomainError("density must be non-negative")
        amp_rate = None
        if tail is not None:
            if tail == "fit":
                k = max(2, int(math.ceil(0.1 * r.size)))
                fitted = _fit_tail(r[-k:], dens[-k:], r[-1])
                amp_rate = None if fitted is None else (float(dens[-1]), fitted[1])
            else:
                amp_rate = (float(dens[-1]), float(tail))

        def interp(x):
            return np.interp(x, r, dens)

        return cls(interp, r[-1], amp_rate, r, samples=(r, dens))

    @property
    def is_tabulated(self) -> bool:
        return self.samples is not None

    def __call__(self, r):
        x = np.asarray(r, dtype=float)
        if np.any(x < 0):
            raise DomainError("noise magnitude must be non-negative")
        if not self.is_tabulated:
            out = np.asarray(self._density(x), dtype=float)
            return out if out.ndim else float(out)
        out = np.where(x <= self.support, self._density(np.minimum(x, self.support)), 0.0)
        if self.tail is not None:
            amp, rate = self.tail
            beyond = x > self.support
            with np.errstate(over="ignore"):
                out = np.where(beyond, amp * np.exp(-rate * (x - self.support)), out)
        return out if out.ndim else float(out)

    def to_csv(self, path, r: Optional[Sequence[float]] = None) -> None:
        """Write ``r_km,density`` rows (the stored samples unless ``r`` is given)."""
        if r is None:
            if not self.is_tabulated:
                raise ConfigError("analytic radials need explicit radii to export")
            r = self.samples[0]
        r = np.asarray(r, dtype=float)
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r_km", "density"])
            for ri, di in zip(r, np.atleast_1d(self(r))):
                w.writerow([repr(float(ri)), repr(float(di))])

    @classmethod
    def from_csv(cls, path, tail=None) -> "Radial":
        with open(Path(path), newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"r_km", "density"} <= set(reader.fieldnames):
                raise ConfigError("radial CSV header must contain r_km and density")
            rows = [(float(row["r_km"]), float(row["density"])) for row in reader]
        r, d = zip(*rows) if rows else ((), ())
        return cls.tabulated(r, d, tail=tail)


def _fit_tail(rs, dens, support):
    rs = np.asarray(rs, dtype=float)
    dens = np.asarray(dens, dtype=float)
    if np.any(dens <= 0):
        return None
    slope, intercept = np.polyfit(rs, np.log(dens), 1)
    return float(np.exp(intercept + slope * support)), float(-slope)


# ---------------------------------------------------------------- quadrature

def _radial_integral(radial: Radial, weight: LossFn, lower: float = 0.0) -> float:
    """``int_lower^inf R(r) w(r) 2 pi r dr`` over the support plus the tail."""
    total = 0.0
    s = radial.support
    if lower < s:
        pts = sorted({p for p in (*radial.breakpoints, *weight.breakpoints) if lower < p < s})
        if radial.is_tabulated:
            total += _segment_gauss(radial, weight, [lower, *pts, s])
        else:
            total += _adaptive(lambda r: radial(r) * weight(r) * 2 * np.pi * r, lower, s, pts)
    if radial.tail is not None:
        amp, rate = radial.tail
        if amp > 0:
            if not rate > 0:
                raise NumericError("tail does not decay; integral diverges", partial=total)
            start = max(lower, s)

            def tail_fn(r):
                return amp * math.exp(-rate * (r - s)) * float(weight(r)) * 2 * math.pi * r

            pts = sorted(p for p in weight.breakpoints if p > start)
            edges = [start, *pts]
            for a, b in zip(edges[:-1], edges[1:]):
                total += _adaptive(tail_fn, a, b, ())
            total += _adaptive(tail_fn, edges[-1], math.inf, ())
    return total


def _segment_gauss(radial, weight, edges):
    a = np.asarray(edges[:-1])
    b = np.asarray(edges[1:])
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x = mid[:, None] + half[:, None] * _GL_X[None, :]
    f = radial(x) * weight(x) * 2 * np.pi * x
    return float(np.sum(half * (f @ _GL_W)))


def _adaptive(fn, a, b, points):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            kwargs = {"points": points} if points and math.isfinite(b) else {}
            val, _ = integrate.quad(fn, a, b, epsabs=1e-12, epsrel=1e-12, limit=500, **kwargs)
        except integrate.IntegrationWarning as exc:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                val, _ = integrate.quad(fn, a, b, limit=500)
            if not math.isfinite(val) or abs(val) > 1e300:
                raise NumericError(f"quadrature diverged on [{a}, {b}]", partial=val) from exc
            _check_converged(fn, a, b, val, exc)
    if not math.isfinite(val):
        raise NumericError(f"quadrature diverged on [{a}, {b}]", partial=val)
    return val


def _check_converged(fn, a, b, val, exc):
    # QUADPACK warns on round-off even when the result is good; accept if a
    # looser request agrees to 1e-9 absolute.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        loose, err = integrate.quad(fn, a, b, epsabs=1e-10, epsrel=1e-10, limit=1000)
    if abs(loose - val) > 1e-9 or err > 1e-8:
        raise NumericError(f"quadrature did not converge on [{a}, {b}]", partial=val) from exc


# ---------------------------------------------------------------- operations

def check_normalization(radial: Radial) -> float:
    """Return ``|int_0^inf R(r) 2 pi r dr - 1|``."""
    return abs(_radial_integral(radial, _ONE) - 1.0)


def expected_loss(radial: Radial, loss: LossFn) -> float:
    """Expected loss ``int_0^inf R(r) L(r) 2 pi r dr`` of a normalized radial."""
    residual = check_normalization(radial)
    if residual >= NORMALIZATION_TOL:
        raise DomainError(f"radial is not normalized (residual {residual:.3g})")
    return _radial_integral(radial, loss)


def tail_probability(radial: Radial, r: float) -> float:
    """``P(> r) = int_r^inf R(s) 2 pi s ds``."""
    if r < 0:
        raise DomainError("radius must be non-negative")
    return _radial_integral(radial, _ONE, lower=float(r))


@dataclasses.dataclass(frozen=True)
class TightnessResult:
    holds: bool
    violation: Optional[tuple] = None  # (r, P(>r), rho(r))

    def __bool__(self):
        return self.holds


def check_rho_tightness(radial: Radial, rho: Callable[[float], float],
                        probe_radii: Sequence[float]) -> TightnessResult:
    """Check ``P(> r) <= rho(r)`` at every probe radius."""
    radii = np.asarray(probe_radii, dtype=float)
    if radii.size == 0 or np.any(radii < 0):
        raise ConfigError("probe radii must be a non-empty set of non-negative radii")
    for r in radii:
        bound = float(rho(r))
        if not 0.0 <= bound <= 1.0:
            raise DomainError(f"rho({r}) = {bound} lies outside [0, 1]")
        p = tail_probability(radial, r)
        if p > bound + TIGHTNESS_TOL:
            return TightnessResult(False, (float(r), p, bound))
    return TightnessResult(True)


@dataclasses.dataclass(frozen=True)
class PrivacyReport:
    """Result of a radial privacy check.

    Attributes:
        holds: every probed pair satisfied the bound.
        worst_margin: min over pairs of ``ell(|r-r'|) - log(R(r)/R(r'))``.
        worst_pair: the ``(r, r')`` attaining it.
        infinite_ratio: some pair had ``R(r') = 0 < R(r)`` under a finite budget.
    """

    holds: bool
    worst_margin: float
    worst_pair: tuple
    infinite_ratio: bool = False

    def __bool__(self):
        return self.holds


def default_probe_radii(radial: Radial, ell: DistinguishabilityFn, n: int = 200) -> np.ndarray:
    upper = 10.0 / ell.epsilon if isinstance(ell, Linear) and ell.epsilon > 0 else radial.support
    return np.geomspace(upper * 1e-3, upper, n)


def check_radial_privacy(radial: Radial, ell: DistinguishabilityFn,
                         probe_pairs=None) -> PrivacyReport:
    """Check ``R(r) <= exp(ell_X(r, r')) R(r')`` on probed ordered pairs.

    ``ell_X(r, r') = ell(|r - r'|)`` is the minimal distinguishability on the
    whole plane.  The check is strict: any probed violation fails, with no
    allowance for exceptional null sets.

    Args:
        probe_pairs: array of ``(r, r')`` rows; by default every ordered pair
            of 200 log-spaced radii up to ``10/epsilon`` (Linear) or the
            radial's support.
    """
    if probe_pairs is None:
        radii = default_probe_radii(radial, ell)
        r1, r2 = np.meshgrid(radii, radii, indexing="ij")
        r1, r2 = r1.ravel(), r2.ravel()
    else:
        pairs = np.asarray(probe_pairs, dtype=float).reshape(-1, 2)
        if pairs.size == 0:
            raise ConfigError("empty probe set")
        r1, r2 = pairs[:, 0], pairs[:, 1]
    d1 = np.asarray(radial(r1), dtype=float)
    d2 = np.asarray(radial(r2), dtype=float)
    budget = np.asarray(minimal_distinguishability(ell, r1, r2), dtype=float)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_ratio = np.log(d1) - np.log(d2)
        margin = budget - log_ratio
        ok = d1 <= np.exp(budget) * d2 * (1 + PRIVACY_REL_TOL)
    both_zero = (d1 == 0) & (d2 == 0)
    margin[both_zero | np.isnan(margin)] = math.inf
    ok |= both_zero | np.isinf(budget)
    infinite = bool(np.any((d2 == 0) & (d1 > 0) & np.isfinite(budget)))
    i = int(np.argmin(margin))
    return PrivacyReport(bool(ok.all()), float(margin[i]), (float(r1[i]), float(r2[i])), infinite)


# ---------------------------------------------------------------- polar fields

@dataclasses.dataclass(frozen=True)
class PolarField:
    """Noise density sampled on a polar grid.

    ``r`` is uniform on ``[0, r_max]`` and ``theta`` uniform on ``[0, 2 pi)``;
    ``density[i, j]`` is the density at ``(r[i], theta[j])``.  Integrals use the
    trapezoid rule in ``r`` and the periodic rectangle rule in ``theta``.
    """

    r: np.ndarray
    theta: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        if self.density.shape != (self.r.size, self.theta.size):
            raise ConfigError("density must have shape (len(r), len(theta))")

    @classmethod
    def from_function(cls, fn: Callable, r_max: float, n_r: int = 512,
                      n_theta: int = 256) -> "PolarField":
        """Sample ``fn(r, theta)`` (vectorised) on the default grid."""
        r = np.linspace(0.0, r_max, n_r)
        theta = np.arange(n_theta) * (2 * np.pi / n_theta)
        rr, tt = np.meshgrid(r, theta, indexing="ij")
        return cls(r, theta, np.asarray(fn(rr, tt), dtype=float))

    def ring_density(self) -> np.ndarray:
        """Angular mean of the density at each radius."""
        return self.density.mean(axis=1)

    def _integrate(self, weight) -> float:
        ring = 2 * np.pi * self.ring_density() * self.r * weight
        return float(np.trapezoid(ring, self.r))

    def mass(self) -> float:
        return self._integrate(1.0)

    def expected_loss(self, loss: LossFn) -> float:
        return self._integrate(loss(self.r))

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r_km", "theta_rad", "density"])
            for i, ri in enumerate(self.r):
                for j, tj in enumerate(self.theta):
                    w.writerow([repr(float(ri)), repr(float(tj)), repr(float(self.density[i, j]))])

    @classmethod
    def from_csv(cls, path) -> "PolarField":
        with open(Path(path), newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"r_km", "theta_rad", "density"} <= set(reader.fieldnames):
                raise ConfigError("polar CSV header must contain r_km, theta_rad, density")
            rows = np.array([[float(x["r_km"]), float(x["theta_rad"]), float(x["density"])]
                             for x in reader])
        r = np.unique(rows[:, 0])
        theta = np.unique(rows[:, 1])
        dens = np.zeros((r.size, theta.size))
        dens[np.searchsorted(r, rows[:, 0]), np.searchsorted(theta, rows[:, 1])] = rows[:, 2]
        return cls(r, theta, dens)


def circularize(field: PolarField) -> Radial:
    """Average a noise field over angles to get a radial with equal expected loss."""
    if np.any(field.density < 0):
        raise DomainError("noise field has negative density")
    mass = field.mass()
    if abs(mass - 1.0) > 1e-3:
        warnings.warn(f"noise field mass {mass:.6g} is not normalized", RuntimeWarning,
                      stacklevel=2)
    return Radial.tabulated(field.r, field.ring_density())
