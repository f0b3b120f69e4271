"""Planar Laplace noise: radial, CDF, exact sampling and the symmetric mechanism.

The planar Laplace noise function with parameter ``epsilon`` (km^-1) has radial

    R(r) = epsilon**2 / (2 pi) * exp(-epsilon r)

so the noise magnitude follows a Gamma(2, 1/epsilon) law with CDF
``C(r) = 1 - (1 + epsilon r) exp(-epsilon r)`` and mean ``2 / epsilon``.
Magnitudes are drawn by inverting ``C`` with a safeguarded Newton iteration;
angles are uniform.

Units are km and km^-1 throughout.  Any consistent unit works: with locations
in metres and ``epsilon = 1/200`` m^-1 the mean displacement is 400 m.

Feasible comparison radials
---------------------------
A radial ``R`` satisfies ``R(r) <= exp(eps |r - r'|) R(r')`` for all ``r, r'``
exactly when ``log R`` is ``eps``-Lipschitz.  The generators below only build
radials with that property:

* ``PlanarLaplace(eps').radial()`` for ``eps' <= eps``: ``log R`` has slope
  ``-eps'``.
* :func:`laplace_mixture`: if ``R1`` and ``R2`` each satisfy the bound then so
  does ``a R1 + (1 - a) R2``, since the inequality is linear in ``R``.
* :func:`lipschitz_radial`: knot values with log-slopes clipped to
  ``ln(1 + eps h) / h`` on a grid of spacing ``h``.  Linear interpolation
  between values ``u`` and ``u * exp(s h)`` has log-derivative at most
  ``(exp(|s| h) - 1) / h <= eps``, and the exponential tail decays at a rate
  in ``(0, eps]``, so ``log R`` is ``eps``-Lipschitz everywhere.  Rescaling to
  unit mass keeps the property.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Sequence, Union

import numpy as np
from scipy import special

from geopriv.errors import DomainError, NumericError
from geopriv.radial import Radial, check_normalization, _radial_integral, _ONE

INVERSE_CDF_TOL = 1e-12
INVERSE_CDF_MAX_ITER = 200


class RngState:
    """Explicit Philox (counter-based) random stream.

    Two states built from the same seed produce identical streams.  Drawing
    from :attr:`generator` advances the counter; :meth:`split` derives
    independent child streams by jumping the counter ahead.
    """

    def __init__(self, seed: int, _bitgen: Optional[np.random.Philox] = None):
        self.seed = int(seed)
        self._bitgen = _bitgen if _bitgen is not None else np.random.Philox(key=self.seed % 2**64)
        self.generator = np.random.Generator(self._bitgen)

    @property
    def counter(self) -> int:
        return int(self._bitgen.state["state"]["counter"][0])

    def split(self, n: int) -> list:
        return [RngState(self.seed, self._bitgen.jumped(i + 1)) for i in range(n)]

    def uniform_open(self, size=None):
        """Uniform draws on the open interval (0, 1)."""
        k = self.generator.integers(0, 2**53, size=size, dtype=np.int64)
        return (k + 0.5) / 2.0**53


@dataclasses.dataclass(frozen=True)
class NoiseVector:
    """Noise in polar form; fields may be scalars or equal-shape arrays."""

    magnitude: Union[float, np.ndarray]
    angle: Union[float, np.ndarray]

    @property
    def dx(self):
        return self.magnitude * np.cos(self.angle)

    @property
    def dy(self):
        return self.magnitude * np.sin(self.angle)


@dataclasses.dataclass(frozen=True)
class PlanarLaplace:
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")

    def radial(self) -> Radial:
        eps = self.epsilon
        peak = eps * eps / (2 * math.pi)

        def density(r):
            return peak * np.exp(-eps * np.asarray(r, dtype=float))

        return Radial.analytic(density, support_hint=30.0 / eps, tail=eps)

    def expected_loss(self) -> float:
        """Mean noise magnitude ``2 / epsilon`` (linear loss)."""
        return 2.0 / self.epsilon

    def cdf(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise DomainError("radius must be non-negative")
        # gammainc(2, x) == 1 - (1 + x) exp(-x), without cancellation at small x
        out = special.gammainc(2.0, self.epsilon * r)
        return out if out.ndim else float(out)

    def inverse_cdf(self, p):
        """Radius ``r`` with ``cdf(r) == p`` for ``p`` in (0, 1).

        Newton iteration on ``x = epsilon r`` with bisection fallback whenever a
        step leaves the current bracket.
        """
        p = np.asarray(p, dtype=float)
        if np.any(~((p > 0) & (p < 1))):
            raise DomainError("p must lie strictly between 0 and 1")
        scalar = p.ndim == 0
        p = np.atleast_1d(p)
        lo = np.zeros_like(p)
        hi = np.full_like(p, 30.0)
        while True:
            short = special.gammainc(2.0, hi) < p
            if not short.any():
                break
            hi[short] *= 2.0
        x = np.where(p < 0.1, np.sqrt(2 * p), 0.5 * (lo + hi))
        x = np.clip(x, lo, hi)
        active = np.ones(p.shape, dtype=bool)
        for _ in range(INVERSE_CDF_MAX_ITER):
            xa = x[active]
            pa = p[active]
            g = special.gammainc(2.0, xa) - pa
            below = g < 0
            lo_a = np.where(below, xa, lo[active])
            hi_a = np.where(below, hi[active], xa)
            deriv = xa * np.exp(-xa)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(deriv > 0, g / deriv, np.nan)
            x_new = xa - step
            bad = ~((x_new > lo_a) & (x_new < hi_a))
            x_new[bad] = 0.5 * (lo_a[bad] + hi_a[bad])
            converged = np.abs(g) <= INVERSE_CDF_TOL * np.minimum(pa, 1 - pa)
            x_new[converged] = xa[converged]
            scale = np.maximum(xa, 1e-300)
            done = (converged | (np.abs(x_new - xa) <= 1e-15 * scale)
                    | (hi_a - lo_a <= 4e-16 * scale))
            idx = np.flatnonzero(active)
            x[idx] = x_new
            lo[idx] = lo_a
            hi[idx] = hi_a
            active[idx[done]] = False
            if not active.any():
                break
        else:
            raise NumericError("inverse CDF did not converge", partial=x / self.epsilon)
        r = x / self.epsilon
        return float(r[0]) if scalar else r

    def sample(self, rng: RngState, size: Optional[int] = None) -> NoiseVector:
        """Draw noise vectors; ``size=None`` gives a single vector of floats."""
        n = 1 if size is None else size
        theta = 2 * np.pi * rng.uniform_open(n)
        r = self.inverse_cdf(rng.uniform_open(n))
        r = np.atleast_1d(r)
        if size is None:
            return NoiseVector(float(r[0]), float(theta[0]))
        return NoiseVector(r, theta)

    def obfuscate(self, location, rng: RngState):
        """Report ``location`` plus Laplace noise.

        ``location`` is a point ``(x, y)`` or an array of shape (n, 2); one noise
        vector is drawn per point.
        """
        loc = np.asarray(location, dtype=float)
        if not np.all(np.isfinite(loc)):
            raise DomainError("location must be finite")
        if loc.ndim == 1:
            v = self.sample(rng)
            return loc + np.array([v.dx, v.dy])
        v = self.sample(rng, size=loc.shape[0])
        return loc + np.column_stack([v.dx, v.dy])


# ---------------------------------------------------------------- feasible radials

def laplace_mixture(eps1: float, eps2: float, weight: float) -> Radial:
    """Radial ``weight * Laplace(eps1) + (1 - weight) * Laplace(eps2)``."""
    if not 0.0 <= weight <= 1.0:
        raise DomainError("mixture weight must lie in [0, 1]")
    c1 = weight * eps1 ** 2 / (2 * math.pi)
    c2 = (1 - weight) * eps2 ** 2 / (2 * math.pi)

    def density(r):
        r = np.asarray(r, dtype=float)
        return c1 * np.exp(-eps1 * r) + c2 * np.exp(-eps2 * r)

    return Radial.analytic(density, support_hint=60.0 / min(eps1, eps2), tail="fit")


def lipschitz_radial(epsilon: float, r_max: float, log_slopes: Sequence[float],
                     tail_rate: Optional[float] = None) -> Radial:
    """Normalized tabulated radial whose log-density is ``epsilon``-Lipschitz.

    Args:
        epsilon: Lipschitz bound (km^-1).
        r_max: last knot; knots are uniform on ``[0, r_max]``, one per slope.
        log_slopes: requested log-slopes per segment, clipped into the
            feasible band.
        tail_rate: decay rate past ``r_max``, clipped into ``(0, epsilon]``;
            defaults to ``epsilon``.
    """
    slopes = np.asarray(log_slopes, dtype=float)
    h = r_max / slopes.size
    band = math.log1p(epsilon * h) / h
    slopes = np.clip(slopes, -band, band)
    knots = np.linspace(0.0, r_max, slopes.size + 1)
    logd = np.concatenate([[0.0], np.cumsum(slopes * h)])
    dens = np.exp(logd - logd.max())
    rate = epsilon if tail_rate is None else min(max(tail_rate, 1e-3 * epsilon), epsilon)
    raw = Radial.tabulated(knots, dens, tail=rate)
    mass = _radial_integral(raw, _ONE)
    return Radial.tabulated(knots, dens / mass, tail=rate)


def feasible_radials(epsilon: float, rng: RngState, count: int = 60) -> list:
    """A battery of radials that satisfy epsilon-geo-indistinguishability.

    Cycles through the three families: slower Laplace radials, mixtures of two
    slower Laplace radials, and randomly perturbed Lipschitz-log radials.
    """
    g = rng.generator
    out = []
    for i in range(count):
        kind = i % 3
        if kind == 0:
            out.append(PlanarLaplace(epsilon * g.uniform(0.2, 1.0)).radial())
        elif kind == 1:
            e1, e2 = epsilon * g.uniform(0.2, 1.0, size=2)
            out.append(laplace_mixture(e1, e2, g.uniform(0.0, 1.0)))
        else:
            segments = int(g.integers(20, 200))
            r_max = g.uniform(10.0, 40.0) / epsilon
            slopes = -epsilon + epsilon * g.normal(0.0, 1.5, size=segments)
            out.append(lipschitz_radial(epsilon, r_max, slopes, g.uniform(0.3, 1.0) * epsilon))
    for rad in out:
        if check_normalization(rad) > 1e-6:
            raise NumericError("generated radial failed normalization")
    return out
