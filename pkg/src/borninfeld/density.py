"""Declarative charge densities: Gaussians, constant balls, power bumps, mollified point charges.

A :class:`ChargeDensity` is a sum of :class:`Term` objects.  Each term knows
its closed-form total charge, how to sample itself on a grid, and (when
smooth) its gradient.  ``L^p`` norms use closed forms for single terms,
radial quadrature for concentric sums and tensor Gauss-Legendre otherwise.
"""

from dataclasses import dataclass, field
from functools import cached_property
from math import gamma, pi

import numpy as np
from scipy import integrate

from .errors import DomainError, UnsupportedAuditError
from .grid import sphere_area, unit_ball_volume
from .radial_oracle import RadialDensity

KINDS = ("gaussian", "ball_constant", "radial_power_bump", "mollified_point")
KERNELS = ("gaussian", "bump")

# Gaussians are treated as supported in B(c, GAUSS_CUT * sigma); the mass
# outside is below 1e-30 of the total
GAUSS_CUT = 12.0


def _bump(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = t < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


def _bump_mass(n):
    """``int_{B(0,1)} exp(-1/(1-|x|^2)) dx`` in R^n."""
    val, _ = integrate.quad(lambda t: float(_bump(t)) * t ** (n - 1), 0.0, 1.0,
                            epsabs=1e-15, epsrel=1e-13)
    return sphere_area(n) * val


@dataclass(frozen=True)
class Term:
    """One density term.

    ``params`` depends on ``kind``:

    * ``gaussian``: ``sigma``, ``weight`` (total charge).
    * ``ball_constant``: ``radius``, ``value`` (charge per unit volume).
    * ``radial_power_bump``: ``radius``, ``exponent`` s, ``value`` c; the density is
      ``c |x - center|^(-s)`` on the ball.
    * ``mollified_point``: ``sigma``, ``charge`` q, ``kernel`` (``gaussian`` or ``bump``).
    """

    kind: str
    center: tuple
    params: dict
    n: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError("unknown density kind %r (valid: %s)" % (self.kind, ", ".join(KINDS)))
        if len(self.center) != self.n:
            raise DomainError("center must have %d coordinates" % self.n)
        required = {
            "gaussian": ("sigma", "weight"),
            "ball_constant": ("radius", "value"),
            "radial_power_bump": ("radius", "exponent", "value"),
            "mollified_point": ("sigma", "charge", "kernel"),
        }[self.kind]
        missing = [k for k in required if k not in self.params]
        if missing:
            raise DomainError("%s term is missing %s" % (self.kind, ", ".join(missing)))
        for key in ("sigma", "radius"):
            if key in self.params and not self.params[key] > 0:
                raise DomainError("%s must be positive" % key)
        if self.kind == "mollified_point" and self.params["kernel"] not in KERNELS:
            raise DomainError("kernel must be one of %s" % ", ".join(KERNELS))
        if self.kind == "radial_power_bump" and not self.params["exponent"] >= 0:
            raise DomainError("exponent must be non-negative")

    # ---- radial description ----------------------------------------------

    @property
    def smooth(self):
        return self.kind in ("gaussian", "mollified_point")

    @property
    def support_radius(self):
        p = self.params
        if self.kind == "gaussian" or (self.kind == "mollified_point" and p["kernel"] == "gaussian"):
            return GAUSS_CUT * p["sigma"]
        if self.kind == "mollified_point":
            return p["sigma"]
        return p["radius"]

    @cached_property
    def _bump_norm(self):
        return _bump_mass(self.n)

    def profile(self, r):
        """Density as a function of the distance to the center."""
        r = np.asarray(r, dtype=float)
        p, n = self.params, self.n
        if self.kind == "gaussian" or (self.kind == "mollified_point" and p["kernel"] == "gaussian"):
            w = p["weight"] if self.kind == "gaussian" else p["charge"]
            s2 = p["sigma"] ** 2
            return w * np.exp(-0.5 * r * r / s2) / (2.0 * pi * s2) ** (n / 2)
        if self.kind == "mollified_point":
            s = p["sigma"]
            return p["charge"] * _bump(r / s) / (self._bump_norm * s ** n)
        if self.kind == "ball_constant":
            return np.where(r <= p["radius"], float(p["value"]), 0.0)
        with np.errstate(divide="ignore"):
            return np.where(r <= p["radius"], p["value"] * r ** (-p["exponent"]), 0.0)

    def dprofile(self, r):
        r = np.asarray(r, dtype=float)
        p = self.params
        if self.kind == "gaussian" or (self.kind == "mollified_point" and p["kernel"] == "gaussian"):
            return -r / p["sigma"] ** 2 * self.profile(r)
        if self.kind == "mollified_point":
            s = p["sigma"]
            t = r / s
            inside = t < 1.0
            out = np.zeros_like(t)
            out[inside] = -2.0 * t[inside] / (1.0 - t[inside] ** 2) ** 2 / s
            return out * self.profile(r)
        raise UnsupportedAuditError("%s densities are not differentiable" % self.kind)

    # ---- closed forms ---------------------------------------------------------

    def total_charge(self):
        p, n = self.params, self.n
        if self.kind == "gaussian":
            return float(p["weight"])
        if self.kind == "mollified_point":
            return float(p["charge"])
        if self.kind == "ball_constant":
            return p["value"] * unit_ball_volume(n) * p["radius"] ** n
        s = p["exponent"]
        if s >= n:
            raise DomainError("radial_power_bump with exponent %g >= n has infinite charge" % s)
        return p["value"] * sphere_area(n) * p["radius"] ** (n - s) / (n - s)

    def lp_norm(self, q):
        """Closed-form ``L^q`` norm where one exists, else ``None``."""
        p, n = self.params, self.n
        if self.kind == "gaussian" or (self.kind == "mollified_point" and p["kernel"] == "gaussian"):
            w = abs(p["weight"] if self.kind == "gaussian" else p["charge"])
            s2 = p["sigma"] ** 2
            peak = w / (2.0 * pi * s2) ** (n / 2)
            if q == np.inf:
                return peak
            return peak * (2.0 * pi * s2 / q) ** (n / (2.0 * q))
        if self.kind == "ball_constant":
            v = abs(p["value"])
            return v if q == np.inf else v * (unit_ball_volume(n) * p["radius"] ** n) ** (1.0 / q)
        if self.kind == "radial_power_bump":
            s, c, R = p["exponent"], abs(p["value"]), p["radius"]
            if q == np.inf:
                if s > 0:
                    raise DomainError("radial_power_bump is unbounded for exponent > 0")
                return c
            if s * q >= n:
                raise DomainError(
                    "radial_power_bump |x|^-%g is not in L^%g (needs exponent * p < n = %d)" % (s, q, n))
            return c * (sphere_area(n) * R ** (n - s * q) / (n - s * q)) ** (1.0 / q)
        return None

    # ---- sampling --------------------------------------------------------------

    def sample(self, grid):
        c = np.asarray(self.center, dtype=float)
        r = grid.radius(c)
        vals = self.profile(r)
        if self.kind == "radial_power_bump" and self.params["exponent"] > 0:
            # a node on the singularity takes the average over its own cell,
            # approximated by the ball of equal volume
            s, n = self.params["exponent"], self.n
            r_eq = (grid.cell_volume / unit_ball_volume(n)) ** (1.0 / n)
            at = r < 1e-12 * grid.h
            vals = np.where(at, self.params["value"] * n / (n - s) * r_eq ** (-s), vals)
        return vals

    def sample_gradient(self, grid):
        c = np.asarray(self.center, dtype=float).reshape((self.n,) + (1,) * self.n)
        x = grid.coords - c
        r = np.sqrt(np.einsum("i...,i...->...", x, x))
        dp = self.dprofile(r)
        safe = np.where(r > 0, r, 1.0)
        return np.where(r > 0, dp / safe, 0.0) * x


@dataclass(frozen=True)
class ChargeDensity:
    """Sum of density terms; ``norm_exponents`` are the ``p`` values whose finiteness is enforced."""

    terms: tuple = field(default_factory=tuple)
    n: int = 3
    norm_exponents: tuple = ()

    def __post_init__(self):
        for t in self.terms:
            if t.n != self.n:
                raise DomainError("term dimension %d does not match density dimension %d" % (t.n, self.n))
            for q in self.norm_exponents:
                if q < 1:
                    raise DomainError("p must satisfy p >= 1, got %r" % (q,))
                # raises for non-integrable terms
                t.lp_norm(q)

    @property
    def is_zero(self):
        return not self.terms

    @property
    def smooth(self):
        return all(t.smooth for t in self.terms)

    @property
    def concentric(self):
        return len({tuple(t.center) for t in self.terms}) <= 1

    def total_charge(self):
        return float(sum(t.total_charge() for t in self.terms))


def zero_density(n=3):
    return ChargeDensity((), n)


def sample_density(d, grid):
    """Node samples of ``d`` on ``grid``."""
    out = np.zeros(grid.shape)
    for t in d.terms:
        out += t.sample(grid)
    return out


def sample_density_gradient(d, grid):
    """Analytic gradient of a smooth density at the nodes."""
    if not d.smooth:
        kinds = sorted({t.kind for t in d.terms if not t.smooth})
        raise UnsupportedAuditError("density gradient needs smooth terms; got %s" % ", ".join(kinds))
    out = np.zeros((grid.n,) + grid.shape)
    for t in d.terms:
        out += t.sample_gradient(grid)
    return out


def to_radial(d):
    """RadialDensity for a concentric density centered at the origin."""
    if d.is_zero:
        return RadialDensity(lambda r: np.zeros_like(np.asarray(r, dtype=float)), 1.0)
    if not d.concentric or np.any(np.asarray(d.terms[0].center) != 0):
        raise DomainError("radial reduction needs all terms centered at the origin")
    terms = d.terms
    R = max(t.support_radius for t in terms)
    bps = tuple(sorted({t.support_radius for t in terms if not t.smooth or t.params.get("kernel") == "bump"}))
    profile = lambda r: sum(t.profile(r) for t in terms)
    return RadialDensity(profile, R, 0.0, bps)


def density_norm(d, p):
    """``||rho||_p`` of the continuum density."""
    if p != np.inf and p < 1:
        raise DomainError("p must satisfy 1 <= p <= inf, got %r" % (p,))
    if d.is_zero:
        return 0.0
    if len(d.terms) == 1:
        val = d.terms[0].lp_norm(p)
        if val is not None:
            return float(val)
    if p == np.inf:
        return _sup_estimate(d)
    for t in d.terms:
        t.lp_norm(p)
    if d.concentric:
        c = d.terms[0]
        n = d.n
        prof = lambda r: abs(float(sum(t.profile(r) for t in d.terms))) ** p * r ** (n - 1)
        edges = sorted({0.0, *(t.support_radius for t in d.terms)})
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            # the substitution r = a + (b - a) x^2 tames an integrable r^-s at the origin
            f = lambda x: 2.0 * x * (b - a) * prof(a + (b - a) * x * x)
            val, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-13, epsrel=1e-11, limit=400)
            total += val
        return float((sphere_area(n) * total) ** (1.0 / p))
    return _tensor_norm(d, p)


def _bounding_box(d):
    lo = np.min([np.asarray(t.center) - t.support_radius for t in d.terms], axis=0)
    hi = np.max([np.asarray(t.center) + t.support_radius for t in d.terms], axis=0)
    return lo, hi


def _tensor_norm(d, p, panels=24, order=8):
    if any(t.kind == "radial_power_bump" and t.params["exponent"] > 0 for t in d.terms):
        raise DomainError("tensor quadrature cannot resolve singular terms at separate centers")
    lo, hi = _bounding_box(d)
    x, w = np.polynomial.legendre.leggauss(order)
    axes, weights = [], []
    for k in range(d.n):
        e = np.linspace(lo[k], hi[k], panels + 1)
        mid, half = 0.5 * (e[1:] + e[:-1]), 0.5 * (e[1:] - e[:-1])
        axes.append((mid[:, None] + half[:, None] * x).ravel())
        weights.append((half[:, None] * w).ravel())
    pts = np.meshgrid(*axes, indexing="ij")
    vals = np.zeros(pts[0].shape)
    for t in d.terms:
        r = np.sqrt(sum((pts[k] - t.center[k]) ** 2 for k in range(d.n)))
        vals += t.profile(r)
    wt = weights[0]
    for k in range(1, d.n):
        wt = np.multiply.outer(wt, weights[k])
    return float(np.sum(wt * np.abs(vals) ** p) ** (1.0 / p))


def _sup_estimate(d, samples=200001):
    if d.concentric:
        r = np.linspace(0.0, max(t.support_radius for t in d.terms), samples)
        return float(np.max(np.abs(sum(t.profile(r) for t in d.terms))))
    vals = []
    for t in d.terms:
        c = np.asarray(t.center, dtype=float)
        vals.append(abs(sum(float(s.profile(np.linalg.norm(c - np.asarray(s.center)))) for s in d.terms)))
    return float(max(vals))
