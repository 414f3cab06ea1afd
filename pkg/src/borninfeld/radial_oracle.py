"""Quadrature-level radial solutions of -div(DF(Du)) = rho.

For a radial density with an optional point charge ``q`` at the origin the
divergence theorem reduces the equation to

    r^(n-1) nu(r) u'(r) = G(r),    G(r) = a_eff - P(r),

with ``P(r) = int_0^r rho(s) s^(n-1) ds`` and ``a_eff = -q / (n omega_n)``;
solving for the slope gives ``u' = G / sqrt(r^(2(n-1)) + G^2)``.  With
``rho = Lambda`` and ``a_eff = a`` this is the integrand of the barrier family
``w_{a,Lambda}``, which satisfies ``div(DF(Dw)) = -Lambda + n omega_n a delta_0``.

Two routes are provided: scalar functions that evaluate every integral by
adaptive quadrature (the reference route), and :class:`RadialSolution`, which
tabulates ``P`` and ``u`` once with a high-order ODE integrator and
evaluates them vectorized.
"""

from dataclasses import dataclass, field
import warnings

import numpy as np
from scipy import integrate

from .errors import QuadratureError
from .grid import sphere_area

EPSABS = 1e-10
EPSREL = 1e-12


@dataclass(frozen=True)
class RadialDensity:
    """Radial charge density ``rho(|x|)`` plus a point charge at the origin.

    ``profile`` must accept numpy arrays.  ``breakpoints`` lists radii where
    the profile is not smooth, passed to the quadrature and ODE routines.
    """

    profile: object
    support_radius: float
    point_charge: float = 0.0
    breakpoints: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.support_radius > 0:
            raise ValueError("support_radius must be positive")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= self.support_radius, self.profile(r), 0.0)

    def pieces(self, a, b):
        """Subintervals of [a, b] split at the breakpoints."""
        pts = sorted({a, b, *(p for p in self.breakpoints if a < p < b)})
        return list(zip(pts[:-1], pts[1:]))


def zero_density():
    return RadialDensity(lambda r: np.zeros_like(r), 1.0)


def constant_density(value, radius, point_charge=0.0):
    return RadialDensity(lambda r: np.full_like(r, value), radius, point_charge)


def a_eff(rho, n):
    """Slope parameter of the point charge: ``-q / (n omega_n)``."""
    return -rho.point_charge / sphere_area(n)


def _quad(f, a, b, epsabs=EPSABS, epsrel=EPSREL, limit=200):
    if b <= a:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, a, b, epsabs=epsabs, epsrel=epsrel, limit=limit)
        except integrate.IntegrationWarning as exc:
            val, err = integrate.quad(f, a, b, epsabs=epsabs, epsrel=epsrel, limit=limit,
                                      full_output=1)[:2]
            raise QuadratureError("quadrature did not converge: %s" % exc, achieved=err)
    return val


def cumulative_charge(rho, n, r, epsabs=EPSABS):
    """``P(r) = int_0^r rho(s) s^(n-1) ds``; the charge in B(0, r) is ``n omega_n P(r)``."""
    if r < 0:
        raise ValueError("r must be non-negative")
    top = min(r, rho.support_radius)
    return sum(_quad(lambda s: float(rho.profile(s)) * s ** (n - 1), a, b, epsabs)
               for a, b in rho.pieces(0.0, top))


def total_charge(rho, n, epsabs=EPSABS):
    """Signed total charge, point charge included."""
    return sphere_area(n) * cumulative_charge(rho, n, rho.support_radius, epsabs) + rho.point_charge


def _slope_from_G(G, r, n):
    return G / np.hypot(r ** (n - 1), G)


def radial_slope(rho, n, r, epsabs=EPSABS):
    if r <= 0:
        raise ValueError("radial_slope needs r > 0")
    G = a_eff(rho, n) - cumulative_charge(rho, n, r, epsabs)
    return float(_slope_from_G(G, r, n))


def _tail(G, n, x, epsabs=EPSABS):
    """``int_x^inf G / sqrt(t^(2(n-1)) + G^2) dt`` with the substitution t = 1/s."""
    if G == 0:
        return 0.0
    # G s^(n-3) / sqrt(1 + G^2 s^(2(n-1))) is smooth on [0, 1/x] for n >= 3
    f = lambda s: G * s ** (n - 3) / np.sqrt(1.0 + G * G * s ** (2 * (n - 1)))
    if x <= 1.0:
        return _quad(lambda t: float(_slope_from_G(G, t, n)), x, 1.0, epsabs) + _quad(f, 0.0, 1.0, epsabs)
    return _quad(f, 0.0, 1.0 / x, epsabs)


def radial_value(rho, n, r, epsabs=EPSABS):
    """``u(r) = -int_r^inf u'(s) ds``, normalized so that ``u(inf) = 0``."""
    if r < 0:
        raise ValueError("r must be non-negative")
    if n < 3:
        raise ValueError("the vanishing-at-infinity normalization needs n >= 3")
    R = rho.support_radius
    inner = 0.0
    if r < R:
        for a, b in rho.pieces(r, R):
            inner += _quad(lambda s: radial_slope(rho, n, s, epsabs) if s > 0 else
                           float(np.sign(a_eff(rho, n))), a, b, epsabs)
    G_out = a_eff(rho, n) - cumulative_charge(rho, n, R, epsabs)
    return -(inner + _tail(G_out, n, max(r, R), epsabs))


def barrier_integrand(a, Lambda, n, t):
    G = a - Lambda / n * np.asarray(t, dtype=float) ** n
    return _slope_from_G(G, t, n)


def barrier_w(a, Lambda, n, r, epsabs=EPSABS):
    """``w_{a,Lambda}(r) = int_0^r (a - Lambda t^n/n) / sqrt(t^(2(n-1)) + (a - Lambda t^n/n)^2) dt``.

    ``r = inf`` is allowed for ``Lambda = 0`` and uses the algebraic tail substitution.
    """
    if a < 0 or Lambda < 0:
        raise ValueError("barrier parameters must satisfy a >= 0 and Lambda >= 0")
    if r < 0:
        raise ValueError("r must be non-negative")
    f = lambda t: float(barrier_integrand(a, Lambda, n, t)) if t > 0 else float(a > 0)
    if np.isinf(r):
        if Lambda != 0:
            raise ValueError("w_{a,Lambda}(inf) diverges for Lambda > 0")
        return _quad(f, 0.0, 1.0, epsabs) + _tail(a, n, 1.0, epsabs) if a > 0 else 0.0
    # panels of unit length keep the adaptive routine well inside its budget
    edges = np.unique(np.concatenate([np.arange(0.0, r, 1.0), [r]]))
    return sum(_quad(f, lo, hi, epsabs) for lo, hi in zip(edges[:-1], edges[1:]))


class RadialSolution:
    """Tabulated radial solution (vanishing at infinity) for a RadialDensity.

    ``P`` and ``W(r) = int_0^r u'`` are integrated together on
    ``[0, r_table]`` with DOP853 and dense output; beyond ``r_table`` the
    slope has the closed form for constant ``G`` and ``u`` is obtained from
    the tail integral.
    """

    def __init__(self, rho, n=3, r_table=None, rtol=1e-12, atol=1e-14):
        if n < 3:
            raise ValueError("n must be at least 3")
        self.rho = rho
        self.n = n
        self.a_eff = a_eff(rho, n)
        R = rho.support_radius
        self.r_table = max(r_table or 0.0, 4.0 * R, 10.0)
        self._segments = []
        y = np.zeros(2)
        knots = [a for a, _ in rho.pieces(0.0, R)] + [R, self.r_table]
        knots = sorted(set(knots))
        for a, b in zip(knots[:-1], knots[1:]):
            sol = integrate.solve_ivp(self._rhs, (a, b), y, method="DOP853", rtol=rtol,
                                      atol=atol, dense_output=True)
            if not sol.success:
                raise QuadratureError("radial ODE integration failed: %s" % sol.message)
            self._segments.append((a, b, sol.sol))
            y = sol.y[:, -1]
        self.P_inf = cumulative_charge(rho, n, R)
        self.G_inf = self.a_eff - self.P_inf
        self.W_inf = y[1] + _tail(self.G_inf, n, self.r_table)
        self.total_charge = sphere_area(n) * self.P_inf + rho.point_charge

    def _rhs(self, r, y):
        G = self.a_eff - y[0]
        slope = _slope_from_G(G, r, self.n) if r > 0 else np.sign(G)
        return [float(self.rho(r)) * r ** (self.n - 1), slope]

    def _table(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros((2,) + r.shape)
        for a, b, f in self._segments:
            sel = (r >= a) & (r <= b)
            if sel.any():
                out[:, sel] = f(r[sel])
        return out

    def enclosed(self, r):
        """``P(r)``."""
        r = np.asarray(r, dtype=float)
        return np.where(r < self.r_table, self._table(np.minimum(r, self.r_table))[0], self.P_inf)

    def G(self, r):
        return self.a_eff - self.enclosed(r)

    def slope(self, r):
        r = np.asarray(r, dtype=float)
        return _slope_from_G(self.G(r), r, self.n)

    def nu(self, r):
        r = np.asarray(r, dtype=float)
        rn = r ** (self.n - 1)
        return np.hypot(rn, self.G(r)) / rn

    def flux(self, r):
        """``n omega_n r^(n-1) nu u'``, the outward flux of DF(Du) through the sphere of radius r."""
        r = np.asarray(r, dtype=float)
        return sphere_area(self.n) * r ** (self.n - 1) * self.nu(r) * self.slope(r)

    def value(self, r):
        r = np.asarray(r, dtype=float)
        inside = r <= self.r_table
        out = np.empty(r.shape)
        out[inside] = self._table(r[inside])[1] - self.W_inf
        if (~inside).any():
            far = r[~inside]
            uniq, inv = np.unique(far, return_inverse=True)
            vals = np.array([-_tail(self.G_inf, self.n, x) for x in uniq])
            out[~inside] = vals[inv]
        return out


def flux(sol, r):
    if np.any(np.asarray(r) <= 0):
        raise ValueError("flux needs r > 0")
    return sol.flux(r)


def table(sol, radii):
    """Rows ``(r, u, u', nu, flux)`` for the given radii."""
    r = np.asarray(radii, dtype=float)
    return np.column_stack([r, sol.value(r), sol.slope(r), sol.nu(r), sol.flux(r)])
