"""Audits of the a priori estimates on computed or oracle fields.

Every audit returns an :class:`AuditResult`.  Audits with explicit constants
(``kind="bound"``) pass when ``lhs <= rhs + tolerance * |rhs|``.  Audits that
involve an unknown constant (``kind="regression"``) report the ratio
``lhs / rhs`` and compare it with a stored baseline instead.

Unless stated otherwise the gradient of a grid field is the centered one
and integrals are ``h^n``-weighted node sums.
"""

from dataclasses import dataclass, field
import io
import warnings

import numpy as np

from . import grid as g
from . import lagrangian
from .errors import DomainError
from .minimizer import flux_divergence, l2, one_sided_gradients, energy_gradient

#: nu is capped here when a field touches the light cone
NU_CAP = 1e8
SQRT6 = np.sqrt(6.0)


@dataclass
class AuditResult:
    name: str
    lhs: float
    rhs: float
    passed: bool
    tolerance: float = 0.0
    kind: str = "bound"
    metadata: dict = field(default_factory=dict)

    @property
    def ratio(self):
        if self.rhs != 0:
            return self.lhs / self.rhs
        return 0.0 if self.lhs == 0 else np.inf


def bound(name, lhs, rhs, tolerance, **metadata):
    lhs, rhs = float(lhs), float(rhs)
    return AuditResult(name, lhs, rhs, bool(lhs <= rhs + tolerance * abs(rhs)), tolerance,
                       "bound", metadata)


# ---- nu and margin -----------------------------------------------------------

def _grad_sq(u, grid):
    Du = g.gradient(u, grid, "centered")
    return Du, np.einsum("i...,i...->...", Du, Du)


def nu_field(u, grid):
    """``nu = 1 / sqrt(1 - |Du|^2)`` node-wise, capped at NU_CAP with a warning."""
    _, s = _grad_sq(u, grid)
    floor = 1.0 / NU_CAP ** 2
    if np.any(1.0 - s < floor):
        warnings.warn("field touches the light cone; nu capped at %g" % NU_CAP, RuntimeWarning)
    return 1.0 / np.sqrt(np.maximum(1.0 - s, floor))


def spacelike_margin(u, grid):
    """``theta = 1 - max |Du|``; zero or negative means the light cone is touched."""
    _, s = _grad_sq(u, grid)
    return 1.0 - float(np.sqrt(s.max()))


def _a_matrix(Du):
    """``A = nu^-2 I + Du (x) Du`` with the vector index first, shape ``(n, n) + shape``."""
    n = Du.shape[0]
    s = np.einsum("i...,i...->...", Du, Du)
    A = Du[:, None] * Du[None, :]
    for i in range(n):
        A[i, i] += 1.0 - s
    return A


def _a_form(A, X, Y):
    return np.einsum("ij...,i...,j...->...", A, X, Y)


# ---- Moser exponents --------------------------------------------------------------

@dataclass(frozen=True)
class MoserExponents:
    n: int
    p: float
    chi: float
    alpha: float
    beta: float
    sum1: float
    sum2: float
    series_sum1: float
    series_sum2: float


def _series(beta, p, tol=1e-15):
    """Direct partial sums of 2/(p-2) sum_{j>=0} beta^-j and 2/(p-2) sum_{j>=1} j beta^-j."""
    s0 = s1 = 0.0
    term = 1.0
    j = 0
    while True:
        s0 += term
        s1 += j * term
        j += 1
        term /= beta
        if j * term < tol * max(s1, 1.0) and term < tol * s0:
            break
        if j > 10 ** 7:
            raise DomainError("series did not converge")
    c = 2.0 / (p - 2.0)
    return c * s0, c * s1


def moser_exponents(n, p):
    """Exponents of the Moser iteration for dimension ``n`` and integrability ``p > n``."""
    if n < 3:
        raise DomainError("Moser exponents need n >= 3")
    if not p > n:
        raise DomainError("Moser exponents need p > n (got n = %d, p = %g)" % (n, p))
    chi = n / (n - 2.0)
    alpha = p / (p - 2.0)
    beta = chi / alpha
    sum1 = n / (p - n)
    sum2 = p * n * (n - 2.0) / (2.0 * (p - n) ** 2)
    s1, s2 = _series(beta, p)
    return MoserExponents(n, p, chi, alpha, beta, sum1, sum2, s1, s2)


# ---- estimates ---------------------------------------------------------------------

def sup_nu_report(u, rho, grid, x0=None, R=1.0, p=4.0, baseline=None, baseline_tol=0.01):
    """Local sup bound of nu without its unknown constant.

    lhs = sup nu over B(x0, R/2); rhs = [m_nu^(n/(p(p-n))) + R^(n/(p-n)) m_rho^(n/(p(p-n)))] m_nu^(1/p)
    with ``m_f`` the mean of ``|f|^p`` over B(x0, R).  With a baseline ratio
    the audit passes when the ratio is within ``baseline_tol`` of it.
    """
    n = grid.n
    if not p > n:
        raise DomainError("sup_nu_report needs p > n")
    nu = nu_field(u, grid)
    lhs = g.ball_average(nu, grid, x0, R / 2.0, np.inf)
    m_nu = g.ball_average(nu, grid, x0, R, p) ** p
    m_rho = g.ball_average(rho, grid, x0, R, p) ** p
    e = n / (p * (p - n))
    rhs = (m_nu ** e + R ** (n / (p - n)) * m_rho ** e) * m_nu ** (1.0 / p)
    res = AuditResult("sup_nu", float(lhs), float(rhs), True, baseline_tol, "regression",
                      {"x0": x0, "R": R, "p": p, "baseline": baseline})
    if baseline is not None:
        res.passed = bool(abs(res.ratio / baseline - 1.0) <= baseline_tol)
    return res


def tail_bound_audit(u, rho, grid, k=2.0, p=4.0, M=None, tol=0.1):
    """``||(nu - k)_+||_p <= sqrt(6) p M / eps_k ||rho||_p`` with ``eps_k = 1 - 1/k^2``."""
    if not k > 1:
        raise DomainError("tail_bound_audit needs k > 1")
    if M is None:
        M = float(np.abs(u).max())
    eps_k = 1.0 - 1.0 / k ** 2
    nu = nu_field(u, grid)
    lhs = g.lp_norm(np.maximum(nu - k, 0.0), grid, p)
    const = SQRT6 * p * M / eps_k
    rhs = const * g.lp_norm(rho, grid, p)
    return bound("tail_bound", lhs, rhs, tol, k=k, p=p, M=M, constant=const)


def tail_bound_constant(p, k, M=1.0):
    return SQRT6 * p * M / (1.0 - 1.0 / k ** 2)


def cutoff(grid, x0, r_inner, r_outer):
    """Piecewise-linear radial cutoff and its exact gradient."""
    if not 0 <= r_inner < r_outer:
        raise DomainError("cutoff needs 0 <= r_inner < r_outer")
    c = np.zeros(grid.n) if x0 is None else np.asarray(x0, dtype=float)
    x = grid.coords - c.reshape((grid.n,) + (1,) * grid.n)
    r = np.sqrt(np.einsum("i...,i...->...", x, x))
    eta = np.clip((r_outer - r) / (r_outer - r_inner), 0.0, 1.0)
    ramp = (r > r_inner) & (r < r_outer)
    safe = np.where(r > 0, r, 1.0)
    deta = np.where(ramp, -1.0 / (r_outer - r_inner) / safe, 0.0) * x
    return eta, deta


def caccioppoli_audit(u, rho, grid, q=4.0, x0=None, radii=(0.5, 1.0), tol=0.1):
    """``int eta^2 nu^(q-2) <A Dnu, Dnu> <= 10/(q-1)^2 int nu^q <A Deta, Deta> + 5 int eta^2 nu^(q-2) rho^2``."""
    if not q > grid.n:
        raise DomainError("caccioppoli_audit needs q > n")
    Du, _ = _grad_sq(u, grid)
    nu = nu_field(u, grid)
    Dnu = g.gradient(nu, grid, "centered")
    A = _a_matrix(Du)
    eta, deta = cutoff(grid, x0, *radii)
    dv = grid.cell_volume
    lhs = dv * np.sum(eta ** 2 * nu ** (q - 2) * _a_form(A, Dnu, Dnu))
    c1, c2 = 10.0 / (q - 1.0) ** 2, 5.0
    cut = dv * np.sum(nu ** q * _a_form(A, deta, deta))
    curv = dv * np.sum(eta ** 2 * nu ** (q - 2) * rho ** 2)
    return bound("caccioppoli", lhs, c1 * cut + c2 * curv, tol, q=q, radii=tuple(radii),
                 cutoff_term=float(cut), curvature_term=float(curv), constants=(c1, c2))


def boundary_term(u, grid):
    """Discrete flux pairing with the boundary values, ``h^n sum_boundary (flux divergence) u``."""
    fd = flux_divergence(u, grid)
    bnd = ~grid.interior
    return grid.cell_volume * float(np.sum(fd[bnd] * u[bnd]))


def _pairings(u, rho, grid):
    dv = grid.cell_volume
    grads = one_sided_gradients(u, grid)
    sq = [np.einsum("i...,i...->...", D, D) for D in grads]
    dirichlet = 0.5 * dv * sum(float(np.sum(s)) for s in sq)
    weighted = 0.5 * dv * sum(float(np.sum(s / np.sqrt(1.0 - s))) for s in sq)
    core = grid.interior_slice
    charge = dv * float(np.sum(rho[core] * u[core]))
    return dirichlet, weighted, charge, boundary_term(u, grid)


def l2_identity_audit(u, rho, grid, tol=0.0):
    """``h^n sum |Du|^2 <= h^n sum rho u + B`` with the one-sided gradient pair.

    ``B`` is the boundary pairing of the far-field data (zero for zero data).
    The slack is ``10 ||r||_2 ||u||_2`` from the discrete residual ``r`` plus
    ``tol * |rhs|``.
    """
    dirichlet, _, charge, bterm = _pairings(u, rho, grid)
    rhs = charge + bterm
    slack = 10.0 * l2(energy_gradient(u, rho, grid), grid) * l2(np.where(grid.interior, u, 0.0), grid)
    rel = (slack / abs(rhs) if rhs != 0 else 0.0) + tol
    res = bound("l2_identity", dirichlet, rhs, rel, boundary_term=bterm, slack=slack)
    if rhs == 0 and dirichlet <= slack:
        res.passed = True
    return res


def energy_identity_audit(u, rho, grid):
    """Testing the equation with ``u``: ``h^n sum nu |Du|^2 = h^n sum rho u + B`` up to ``10 ||r|| ||u||``."""
    _, weighted, charge, bterm = _pairings(u, rho, grid)
    rhs = charge + bterm
    slack = 10.0 * l2(energy_gradient(u, rho, grid), grid) * l2(np.where(grid.interior, u, 0.0), grid)
    gap = abs(weighted - rhs)
    return AuditResult("energy_identity", weighted, rhs, bool(gap <= slack + 1e-13 * abs(rhs)),
                       slack / abs(rhs) if rhs else slack, "identity",
                       {"gap": gap, "slack": slack, "boundary_term": bterm})


def linearized_inequality_audit(u, rho, drho, grid, phi, tol=0.1):
    """``int <A Dnu, Dphi> <= int <Du, Drho> phi`` for a non-negative test field ``phi``."""
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0):
        raise DomainError("test field must be non-negative")
    Du, _ = _grad_sq(u, grid)
    nu = nu_field(u, grid)
    A = _a_matrix(Du)
    Dnu = g.gradient(nu, grid, "centered")
    Dphi = g.gradient(phi, grid, "centered")
    dv = grid.cell_volume
    lhs = dv * np.sum(_a_form(A, Dnu, Dphi))
    rhs = dv * np.sum(np.einsum("i...,i...->...", Du, drho) * phi)
    res = bound("linearized_inequality", lhs, rhs, tol)
    if rhs < 0:
        # a relative slack on a negative right side would tighten the bound
        res.passed = bool(lhs <= rhs + tol * abs(rhs))
    return res


def radial_bump(grid, x0=None, radius=1.0):
    """Smooth non-negative test field ``exp(-1/(1-(r/radius)^2))`` supported in B(x0, radius)."""
    t = grid.radius(x0) / radius
    out = np.zeros(grid.shape)
    inside = t < 1
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


def holder_estimate(Du, grid, alpha, n_random=10_000, seed=0, reach=4):
    """Largest ``|Du(x) - Du(y)| / |x - y|^alpha`` over sampled node pairs.

    Pairs are all pairs within ``reach * h`` plus ``n_random`` seeded random pairs.
    """
    Du = np.asarray(Du, dtype=float)
    if not 0 < alpha <= 1:
        raise DomainError("alpha must lie in (0, 1]")
    n, h = grid.n, grid.h
    shape = Du.shape[1:]
    if int(np.prod(shape)) < 2:
        raise DomainError("holder_estimate needs at least two nodes")
    best = 0.0
    rng = range(-reach, reach + 1)
    for off in np.array(np.meshgrid(*([list(rng)] * n), indexing="ij")).reshape(n, -1).T:
        nz = off[off != 0]
        if nz.size == 0 or nz[0] < 0 or off @ off > reach * reach:
            continue
        src = tuple(slice(max(0, -o), shape[k] - max(0, o)) for k, o in enumerate(off))
        dst = tuple(slice(max(0, o), shape[k] - max(0, -o)) for k, o in enumerate(off))
        diff = Du[(slice(None),) + dst] - Du[(slice(None),) + src]
        d = np.sqrt(np.einsum("i...,i...->...", diff, diff)).max()
        best = max(best, float(d) / (h * np.sqrt(off @ off)) ** alpha)
    if n_random:
        gen = np.random.default_rng(seed)
        i = gen.integers(0, shape, size=(n_random, n))
        j = gen.integers(0, shape, size=(n_random, n))
        keep = np.any(i != j, axis=1)
        i, j = i[keep], j[keep]
        a = Du[(slice(None),) + tuple(i.T)]
        b = Du[(slice(None),) + tuple(j.T)]
        num = np.linalg.norm(a - b, axis=0)
        den = (h * np.linalg.norm(i - j, axis=1)) ** alpha
        if num.size:
            best = max(best, float(np.max(num / den)))
    return best


def decay_fit(u, grid, r_min, r_max, center=None):
    """Least-squares slope of ``log |u|`` against ``log |x|`` over ``r_min <= |x| <= r_max``."""
    r = grid.radius(center)
    sel = (r >= r_min) & (r <= r_max) & (np.abs(u) > 0)
    if np.count_nonzero(sel) < 2 or np.ptp(r[sel]) == 0:
        raise DomainError("decay fit undefined: fewer than two usable nodes in the annulus")
    x = np.log(r[sel])
    y = np.log(np.abs(u[sel]))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


# ---- tables -----------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    return "%.17g" % x


def audit_csv(results):
    out = io.StringIO()
    out.write("name,lhs,rhs,ratio,passed,tol\n")
    for a in results:
        out.write(",".join([a.name, _fmt(a.lhs), _fmt(a.rhs), _fmt(a.ratio), _fmt(a.passed),
                            _fmt(a.tolerance)]) + "\n")
    return out.getvalue()


def audit_table(results):
    """Aligned text table; the tolerance is printed next to every verdict."""
    rows = [("name", "kind", "lhs", "rhs", "ratio", "verdict", "tol")]
    for a in results:
        verdict = ("PASS" if a.passed else "FAIL") if a.kind != "regression" else (
            "recorded" if a.metadata.get("baseline") is None else ("PASS" if a.passed else "FAIL"))
        rows.append((a.name, a.kind, "%.6e" % a.lhs, "%.6e" % a.rhs, "%.6g" % a.ratio,
                     verdict, "%.3g" % a.tolerance))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"
