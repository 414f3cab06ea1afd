"""Discrete Born-Infeld energy and its safeguarded minimization.

The energy of a grid field ``u`` is

    E(u) = h^n sum_nodes 1/2 [F(D+ u) + F(D- u)] - h^n sum_interior rho u

where ``D+``/``D-`` are the forward/backward gradients of :mod:`.grid`.
Averaging the two one-sided gradients makes the scheme invariant under
point reflection, hence second-order accurate, while the exact adjoint
pairing keeps ``energy_gradient`` the exact derivative of ``discrete_energy``.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg
import pyamg

from . import grid as g
from .errors import DomainError

log = logging.getLogger(__name__)

KINDS = ("forward", "backward")


@dataclass
class MinimizeOptions:
    margin: float = 1e-6
    max_iterations: int = 5000
    gradient_tolerance: float = None
    relative_tolerance: float = 1e-8
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-12
    init: str = "zero"
    preconditioner: str = "scaled"
    memory: int = 30
    method: str = "lbfgs"
    cg_maxiter: int = 100

    def __post_init__(self):
        if not 0 < self.margin <= 0.1:
            raise ValueError("margin must lie in (0, 0.1]")
        if self.gradient_tolerance is not None and self.gradient_tolerance <= 0:
            raise ValueError("gradient_tolerance must be positive")
        if self.init not in ("zero", "newton"):
            raise ValueError("init must be 'zero' or 'newton'")
        if self.preconditioner not in ("scaled", "laplace", "none"):
            raise ValueError("preconditioner must be 'scaled', 'laplace' or 'none'")
        if self.method not in ("lbfgs", "newton"):
            raise ValueError("method must be 'lbfgs' or 'newton'")


@dataclass
class SolveReport:
    u: np.ndarray
    theta: float
    energy: float
    residual_norm: float
    iterations: int
    converged: bool
    solver: str
    grid: g.Grid = None
    tolerance: float = None
    message: str = ""
    sup_bound: float = None
    holder_bound: float = None
    audits: list = field(default_factory=list)
    history: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def _sq(F):
    return np.einsum("i...,i...->...", F, F)


def one_sided_gradients(u, grid):
    return [g.gradient(u, grid, kind) for kind in KINDS]


def discrete_margin(u, grid):
    """``1 - max |D+- u|`` over all nodes: the margin the constraint acts on."""
    return _Evaluation(u, grid).margin


class _Evaluation:
    """One-sided gradients of a field with the derived quantities cached."""

    def __init__(self, u, grid):
        self.u = u
        self.grid = grid
        self.D = one_sided_gradients(u, grid)
        self.s = [_sq(D) for D in self.D]
        self.worst = max(float(s.max()) for s in self.s)
        self._nu = None

    @property
    def margin(self):
        return 1.0 - np.sqrt(self.worst)

    def feasible(self, margin):
        return self.worst < 1.0 and self.margin >= margin

    @property
    def nu(self):
        if self._nu is None:
            self._nu = [1.0 / np.sqrt(1.0 - s) for s in self.s]
        return self._nu

    def energy(self, rho):
        if self.worst >= 1.0:
            return np.inf
        # 1 - sqrt(1 - s) = s / (1 + sqrt(1 - s)) avoids cancellation for small s
        total = sum(0.5 * float(np.sum(s / (1.0 + np.sqrt(1.0 - s)))) for s in self.s)
        core = self.grid.interior_slice
        return self.grid.cell_volume * (total - float(np.sum(rho[core] * self.u[core])))

    def check(self, margin):
        if self.worst >= (1.0 - margin) ** 2 or self.worst >= 1.0:
            for kind, s in zip(KINDS, self.s):
                worst = np.unravel_index(np.argmax(s), s.shape)
                if s[worst] == self.worst:
                    break
            raise DomainError(
                "gradient margin violated at node %s (%s |Du| = %.17g)"
                % (tuple(int(i) for i in worst), kind, np.sqrt(s[worst]))
            )

    def flux_divergence(self, margin=0.0):
        self.check(margin)
        out = np.zeros(self.grid.shape)
        for kind, D, nu in zip(KINDS, self.D, self.nu):
            out -= 0.5 * g.divergence(nu * D, self.grid, kind)
        return out

    def residual(self, rho, margin=0.0):
        r = self.flux_divergence(margin) - rho
        r[~self.grid.interior] = 0.0
        return r

    def hessian_apply(self, d):
        """Energy Hessian (divided by h^n) applied to ``d``, which vanishes on the boundary."""
        out = np.zeros(self.grid.shape)
        for kind, D, nu in zip(KINDS, self.D, self.nu):
            Dd = g.gradient(d, self.grid, kind)
            c = np.einsum("i...,i...->...", D, Dd)
            out -= 0.5 * g.divergence(nu * Dd + (nu ** 3 * c) * D, self.grid, kind)
        out[~self.grid.interior] = 0.0
        return out

    def hessian_matrix(self):
        """Sparse energy Hessian (divided by h^n) on the interior unknowns, C order."""
        grid = self.grid
        n = grid.n
        blocks = []
        for kind, D, nu in zip(KINDS, self.D, self.nu):
            B = _difference_matrix(grid, kind)
            diags = [[None] * n for _ in range(n)]
            for k in range(n):
                for l in range(n):
                    w = 0.5 * nu ** 3 * D[k] * D[l]
                    if k == l:
                        w = w + 0.5 * nu
                    diags[k][l] = sparse.diags(w.ravel())
            blocks.append(B.T @ (sparse.bmat(diags, format="csr") @ B))
        return sum(blocks[1:], blocks[0]).tocsr()

    def hessian_diagonal(self):
        grid = self.grid
        n, h = grid.n, grid.h
        diag = np.zeros(grid.shape)
        for kind, D, s in zip(KINDS, self.D, self.s):
            nu = 1.0 / np.sqrt(1.0 - np.minimum(s, 1.0 - 1e-16))
            # D^2F = nu I + nu^3 D (x) D
            diag += 0.5 * (n * nu + nu ** 3 * np.sum(D, axis=0) ** 2)
            for k in range(n):
                hkk = 0.5 * (nu + nu ** 3 * D[k] ** 2)
                if kind == "forward":
                    # node i is the upper end of the k-link starting at i - e_k
                    diag[g._sl(n, k, slice(1, None))] += hkk[g._sl(n, k, slice(0, -1))]
                else:
                    diag[g._sl(n, k, slice(0, -1))] += hkk[g._sl(n, k, slice(1, None))]
        return diag / h ** 2


def _difference_matrix(grid, kind):
    """Stacked one-sided difference matrices, rows (axis, node), columns interior nodes."""
    n, h = grid.n, grid.h
    shape = grid.shape
    N = int(np.prod(shape))
    idx = np.arange(N).reshape(shape)
    cols = np.full(N, -1)
    cols[idx[grid.interior_slice].ravel()] = np.arange(int(np.prod(grid.interior_shape)))
    rows, cidx, vals = [], [], []
    for k in range(n):
        lo = idx[_sl_k(n, k, slice(0, -1))].ravel()
        hi = idx[_sl_k(n, k, slice(1, None))].ravel()
        at = lo if kind == "forward" else hi
        for node, sign in ((hi, 1.0), (lo, -1.0)):
            c = cols[node]
            keep = c >= 0
            rows.append(k * N + at[keep])
            cidx.append(c[keep])
            vals.append(np.full(int(keep.sum()), sign / h))
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cidx))),
                             shape=(n * N, int(np.prod(grid.interior_shape))))


def _sl_k(n, k, s):
    return g._sl(n, k, s)


def discrete_energy(u, rho, grid):
    """Discrete energy; ``inf`` if some one-sided gradient is not spacelike."""
    return _Evaluation(u, grid).energy(rho)


def flux_divergence(u, grid, margin=0.0):
    """``-1/2 [div+ DF(D+ u) + div- DF(D- u)]`` on all nodes.

    Raises DomainError naming the worst node if some one-sided gradient has
    margin below ``margin``.
    """
    return _Evaluation(u, grid).flux_divergence(margin)


def energy_gradient(u, rho, grid, margin=0.0):
    """PDE residual ``-div(DF(Du)) - rho`` on interior nodes, zero on the boundary.

    ``h^n * energy_gradient`` is the exact derivative of ``discrete_energy``
    with respect to the interior node values.
    """
    return _Evaluation(u, grid).residual(rho, margin)


def l2(f, grid):
    return float(np.sqrt(grid.cell_volume * np.sum(f * f)))


def _feasible(u, grid, margin):
    return _Evaluation(u, grid).feasible(margin)


def _combine_to_feasible(u_target, u_safe, grid, margin):
    """Largest ``lam`` in [0, 1] (by bisection) with ``lam u_target + (1-lam) u_safe`` feasible."""
    if _feasible(u_target, grid, margin):
        return u_target
    lo, hi = 0.0, 1.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if _feasible(mid * u_target + (1 - mid) * u_safe, grid, margin):
            lo = mid
        else:
            hi = mid
    return lo * u_target + (1 - lo) * u_safe


def initial_field(rho, grid, boundary, init="zero", margin=1e-6, poisson=None):
    """Feasible starting field carrying the boundary data.

    ``"zero"`` is the harmonic lift of the boundary data (identically zero for
    zero data).  ``"newton"`` solves the linear Poisson problem and pulls it
    back toward the lift until it is spacelike with the given margin.
    """
    poisson = poisson or g.PoissonSolver(grid)
    lift = g.harmonic_lift(boundary, grid, poisson)
    if not _feasible(lift, grid, margin):
        raise DomainError("boundary data admit no spacelike harmonic lift on this grid")
    if init == "zero":
        return lift
    newton = lift.copy()
    newton[grid.interior_slice] += poisson.solve(rho[grid.interior_slice])
    return _combine_to_feasible(newton, lift, grid, margin)


def default_tolerance(rho, grid, opts):
    if opts.gradient_tolerance is not None:
        return opts.gradient_tolerance
    scale = l2(rho, grid)
    return opts.relative_tolerance * scale if scale > 0 else 1e-14


def hessian_diagonal(u, grid):
    """Diagonal of the energy Hessian divided by h^n, on all nodes."""
    return _Evaluation(u, grid).hessian_diagonal()


def _preconditioner(ev, grid, kind, poisson):
    if kind == "none":
        return lambda q: q
    if kind == "laplace":
        return poisson.solve
    # "scaled": S L^-1 S with S the ratio of Laplacian to Hessian diagonals
    scale = np.sqrt(2.0 * grid.n / grid.h ** 2 / ev.hessian_diagonal()[grid.interior_slice])
    return lambda q: scale * poisson.solve(scale * q)


def _two_loop(q, memory, apply_pre):
    """L-BFGS two-loop recursion for the direction ``-H^-1 r`` given ``q = -r``."""
    alphas = []
    for s_i, y_i, rho_i in reversed(memory):
        a_i = rho_i * float(np.sum(s_i * q))
        alphas.append(a_i)
        q = q - a_i * y_i
    z = apply_pre(q)
    for (s_i, y_i, rho_i), a_i in zip(memory, reversed(alphas)):
        b_i = rho_i * float(np.sum(y_i * z))
        z = z + (a_i - b_i) * s_i
    return z


def _newton_direction(ev, r, forcing, maxiter):
    """Inexact Newton step: CG on ``H p = -r`` preconditioned by algebraic multigrid.

    Returns ``(p, cg_iterations)``; ``p`` has the interior shape.
    """
    grid = ev.grid
    core = grid.interior_slice
    H = ev.hessian_matrix()
    ml = pyamg.smoothed_aggregation_solver(H, symmetry="hermitian")
    count = [0]

    def tick(_):
        count[0] += 1

    b = -r[core].ravel()
    p, _ = cg(H, b, rtol=forcing, atol=0.0, maxiter=maxiter, M=ml.aspreconditioner(), callback=tick)
    return p.reshape(grid.interior_shape), count[0]


def minimize(rho, grid, opts=None, boundary=None, u0=None, callback=None):
    """Minimize the discrete energy over interior node values.

    Limited-memory BFGS on the interior values.  The initial inverse Hessian
    is ``S L^-1 S``, the inverse discrete Laplacian scaled by the local
    Hessian diagonal, so the iteration count is nearly grid independent.  A
    backtracking line search rejects any step that is not spacelike with the
    safeguard margin or fails the Armijo decrease test; once the energy
    difference drops to rounding level the derivative form of the test is
    used instead.

    ``opts.method = "newton"`` replaces the quasi-Newton direction by an
    inexact Newton step: conjugate gradients on the exact sparse Hessian,
    preconditioned by smoothed-aggregation multigrid, with forcing term
    ``min(0.5, sqrt(|r| / |r0|))``.  Near the light cone the Hessian is
    anisotropic by a factor of about ``nu^2`` and L-BFGS stalls there; the
    Newton steps do not.

    Parameters
    ----------
    rho : ndarray
        Charge density sampled on the nodes.
    grid : Grid
    opts : MinimizeOptions, optional
    boundary : ndarray, optional
        Dirichlet data (only boundary nodes are read); zero by default.
    u0 : ndarray, optional
        Feasible starting field; its boundary values are replaced by ``boundary``.

    Returns
    -------
    SolveReport
        ``converged`` is False when the iteration budget is exhausted or the
        line search stalls; the partial field is still returned.
    """
    opts = opts or MinimizeOptions()
    rho = np.asarray(rho, dtype=float)
    boundary = np.zeros(grid.shape) if boundary is None else np.asarray(boundary, dtype=float)
    poisson = g.PoissonSolver(grid)
    bnd = ~grid.interior
    core = grid.interior_slice

    if u0 is None:
        u = initial_field(rho, grid, boundary, opts.init, opts.margin, poisson)
    else:
        u = np.array(u0, dtype=float)
        u[bnd] = boundary[bnd]
        if not _feasible(u, grid, opts.margin):
            raise DomainError("initial field is not spacelike with the requested margin")

    tol = default_tolerance(rho, grid, opts)
    dv = grid.cell_volume
    ev = _Evaluation(u, grid)
    energy = ev.energy(rho)
    r = ev.residual(rho)
    res = res0 = l2(r, grid)
    history = [(0, energy, res, 1.0)]
    step = 1.0
    memory = []
    converged = res <= tol
    message = "converged" if converged else ""
    it = 0
    while not converged and it < opts.max_iterations:
        it += 1
        d = np.zeros(grid.shape)
        inner = 0
        if opts.method == "newton":
            forcing = min(0.5, np.sqrt(res / res0))
            d[core], inner = _newton_direction(ev, r, forcing, opts.cg_maxiter)
        else:
            apply_pre = _preconditioner(ev, grid, opts.preconditioner, poisson)
            d[core] = _two_loop(-r[core], memory, apply_pre)
        slope = dv * float(np.sum(r * d))
        if slope >= 0:
            message = "search direction is not a descent direction"
            break
        t = step
        # below this the energy difference is rounding noise; fall back to the
        # derivative form of the sufficient-decrease test
        noise = 1e-12 * max(abs(energy), 1.0)
        r_new = None
        while True:
            trial = u + t * d
            ev_trial = _Evaluation(trial, grid)
            if ev_trial.feasible(opts.margin):
                e_trial = ev_trial.energy(rho)
                if e_trial <= energy + opts.armijo * t * slope:
                    break
                if e_trial <= energy + noise:
                    r_new = ev_trial.residual(rho)
                    if dv * float(np.sum(r_new * d)) <= (2 * opts.armijo - 1) * slope:
                        break
                    r_new = None
            t *= opts.backtrack
            if t < opts.min_step:
                break
        if t < opts.min_step:
            message = "line search stalled at step %.3g" % t
            break
        if r_new is None:
            r_new = ev_trial.residual(rho)
        if opts.method == "lbfgs":
            s = (t * d)[core]
            y = (r_new - r)[core]
            sy = float(np.sum(s * y))
            if sy > 0:
                memory.append((s, y, 1.0 / sy))
                if len(memory) > opts.memory:
                    memory.pop(0)
        step = 1.0
        u, r, energy, ev = trial, r_new, e_trial, ev_trial
        res = l2(r, grid)
        history.append((it, energy, res, t))
        if callback is not None:
            callback(it, energy, res, t)
        log.debug("iter %d energy %.17g residual %.3e step %.3e cg %d", it, energy, res, t, inner)
        converged = res <= tol
    if converged:
        message = "converged"
    elif not message:
        message = "max_iterations reached"
    return SolveReport(
        u=u,
        theta=ev.margin,
        energy=energy,
        residual_norm=res,
        iterations=it,
        converged=converged,
        solver="minimize",
        grid=grid,
        tolerance=tol,
        message=message,
        sup_bound=float(np.abs(u).max()),
        history=history,
    )
