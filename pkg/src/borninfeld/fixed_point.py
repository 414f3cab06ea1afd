"""Damped frozen-coefficient fixed-point iteration.

Given an iterate ``v`` the map ``T`` solves the linear non-divergence problem

    Q_v u := -<D^2F(Dv), D^2 u> = rho,    u = u_b on the boundary,

and the damped map is ``v -> tau(T(v)) T(v)`` with the step factor

    tau = min{1, (1 - theta/2) / ||D T(v)||_inf, eps_far / ||D T(v)||_inf,outside B(0,R)}.

A fixed point with ``tau = 1`` solves ``-D^2F(Du) : D^2u = rho``, which is
the non-divergence form of ``-div(DF(Du)) = rho``.  Acceptance is judged in
divergence form with the adjoint-consistent residual of :mod:`.minimizer`,
and the discrepancy between the two forms is recorded in the report.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from . import grid as g
from . import lagrangian
from .diagnostics import AuditResult
from .errors import DomainError, LinearSolveError
from .minimizer import (SolveReport, discrete_margin, energy_gradient, flux_divergence, l2,
                        one_sided_gradients, minimize, MinimizeOptions)

log = logging.getLogger(__name__)


@dataclass
class FrozenOperator:
    """Coefficients ``D^2F(Dv)`` per node, shape ``(n, n) + grid.shape``."""

    coefficients: np.ndarray
    grid: g.Grid
    nu: np.ndarray = None

    def apply(self, u):
        """``-sum_ij a_ij d_i d_j u`` on interior nodes, zero on the boundary."""
        d2 = g.second_derivatives(u, self.grid)
        return -np.einsum("ij...,ij...->...", self.coefficients, d2)

    def diagonal(self):
        """Diagonal of the interior stencil matrix (mixed stencils have no center weight)."""
        tr = np.einsum("ii...->...", self.coefficients)
        return 2.0 * tr / self.grid.h ** 2


def assemble(v, grid, max_gradient=None):
    """Frozen operator at ``v`` from the centered gradient.

    Raises DomainError if ``|Dv| >= 1`` somewhere or exceeds ``max_gradient``.
    """
    Dv = g.gradient(v, grid, "centered")
    xi = np.moveaxis(Dv, 0, -1)
    if max_gradient is not None:
        worst = float(np.sqrt(np.einsum("...i,...i->...", xi, xi).max()))
        if worst > max_gradient:
            raise DomainError("|Dv| = %.6g exceeds the admissible bound %.6g" % (worst, max_gradient))
    ev = lagrangian.eval_full(xi)
    coeff = np.moveaxis(np.moveaxis(ev.hess, -1, 0), -1, 0)
    return FrozenOperator(np.ascontiguousarray(coeff), grid, ev.nu)


def _preconditioner(op, kind, poisson):
    core = op.grid.interior_slice
    if kind == "diagonal":
        inv = 1.0 / op.diagonal()[core]
        return lambda q: q * inv
    if kind == "laplace":
        # -a:D^2 ~ -(tr a / n) Lap, so invert the scalar factor and the Laplacian
        scale = op.grid.n / np.einsum("ii...->...", op.coefficients)[core]
        return lambda q: poisson.solve(q * scale)
    raise ValueError("preconditioner must be 'laplace' or 'diagonal'")


def linear_solve(op, mu, boundary=None, tol=1e-10, restart=50, maxiter=40,
                 preconditioner="laplace", x0=None, poisson=None):
    """Solve ``Q u = mu`` on interior nodes with ``u = boundary`` on boundary nodes.

    Restarted GMRES with relative tolerance ``tol`` on the interior residual.

    Raises
    ------
    LinearSolveError
        If GMRES does not reach ``tol``; the preconditioned residual history is attached.
    """
    grid = op.grid
    core = grid.interior_slice
    shape = grid.interior_shape
    bvals = np.zeros(grid.shape) if boundary is None else np.array(boundary, dtype=float)
    bvals[core] = 0.0
    rhs = (np.asarray(mu, dtype=float) - op.apply(bvals))[core]
    scale = float(np.linalg.norm(rhs))
    u = bvals.copy()
    if scale == 0.0:
        return u

    work = np.zeros(grid.shape)

    def matvec(x):
        work[core] = x.reshape(shape)
        return op.apply(work)[core].ravel()

    size = int(np.prod(shape))
    A = LinearOperator((size, size), matvec=matvec, dtype=float)
    poisson = poisson or g.PoissonSolver(grid)
    pre = _preconditioner(op, preconditioner, poisson)
    M = LinearOperator((size, size), matvec=lambda q: pre(q.reshape(shape)).ravel(), dtype=float)
    history = []
    guess = None if x0 is None else np.asarray(x0, dtype=float)[core].ravel()
    x, info = gmres(A, rhs.ravel(), x0=guess, rtol=tol, atol=0.0, restart=restart, maxiter=maxiter,
                    M=M, callback=history.append, callback_type="pr_norm")
    true_res = float(np.linalg.norm(matvec(x) - rhs.ravel())) / scale
    if info != 0 and true_res > 10 * tol:
        raise LinearSolveError("GMRES stagnated: relative residual %.3e after %d inner steps"
                               % (true_res, len(history)), history)
    u[core] = x.reshape(shape)
    return u


@dataclass
class TauPolicy:
    theta: float = 0.1
    far_cap: float = 0.9
    far_radius: float = None
    center: tuple = None

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if not 0 < self.far_cap < 1:
            raise ValueError("far_cap must lie in (0, 1)")

    @property
    def grad_cap(self):
        return 1.0 - 0.5 * self.theta


def gradient_norms(v, grid, far_radius=None, center=None):
    """``(||Dv||_inf, ||Dv||_inf outside B(center, far_radius))`` with the centered gradient."""
    Dv = g.gradient(v, grid, "centered")
    mag = np.sqrt(np.einsum("i...,i...->...", Dv, Dv))
    full = float(mag.max())
    if far_radius is None:
        return full, 0.0
    outside = grid.radius(center) > far_radius
    return full, float(mag[outside].max()) if outside.any() else 0.0


def tau(v_next, grid, policy, norms=None):
    """Damping factor for ``v_next``; zero norms give ``tau = 1``."""
    full, far = norms if norms is not None else gradient_norms(v_next, grid, policy.far_radius,
                                                              policy.center)
    return tau_from_norms(full, far, policy)


def tau_from_norms(full, far, policy):
    t = 1.0
    if full > 0:
        t = min(t, policy.grad_cap / full)
    if far > 0:
        t = min(t, policy.far_cap / far)
    return t


@dataclass
class FixedPointOptions:
    tolerance: float = 1e-9
    max_iterations: int = 200
    linear_tolerance: float = 1e-10
    restart: int = 50
    linear_maxiter: int = 40
    preconditioner: str = "laplace"
    clamp_patience: int = 25

    def __post_init__(self):
        if self.tolerance <= 0 or self.linear_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.preconditioner not in ("laplace", "diagonal"):
            raise ValueError("preconditioner must be 'laplace' or 'diagonal'")


def fixed_point_solve(rho, grid, policy=None, opts=None, boundary=None, u0=None, callback=None):
    """Iterate the damped map until the update is below tolerance with ``tau = 1``.

    The change tolerance is relative: ``||v_{k+1} - v_k||_inf <= tol * max(||v_{k+1}||_inf, 1e-300)``.
    Each iteration is logged as ``iter k tau residual dv_inf`` where
    ``residual`` is the update sup-norm and ``dv_inf`` the gradient sup-norm of
    the new iterate.
    """
    policy = policy or TauPolicy()
    opts = opts or FixedPointOptions()
    rho = np.asarray(rho, dtype=float)
    boundary = np.zeros(grid.shape) if boundary is None else np.asarray(boundary, dtype=float)
    poisson = g.PoissonSolver(grid)
    bnd = ~grid.interior
    if u0 is None:
        v = g.harmonic_lift(boundary, grid, poisson)
    else:
        v = np.array(u0, dtype=float)
        v[bnd] = boundary[bnd]
    far_radius = policy.far_radius if policy.far_radius is not None else 0.5 * grid.half_width

    taus, increments, lines = [], [], []
    converged = False
    message = ""
    clamped = 0
    it = 0
    while it < opts.max_iterations:
        it += 1
        try:
            op = assemble(v, grid, max_gradient=None)
            Tv = linear_solve(op, rho, boundary, opts.linear_tolerance, opts.restart,
                              opts.linear_maxiter, opts.preconditioner, x0=v, poisson=poisson)
        except (DomainError, LinearSolveError) as exc:
            message = "iteration %d failed: %s" % (it, exc)
            break
        full, far = gradient_norms(Tv, grid, far_radius, policy.center)
        t = tau_from_norms(full, far, policy)
        v_next = t * Tv
        inc = float(np.abs(v_next - v).max())
        taus.append(t)
        increments.append(inc)
        line = "iter %d %.17g %.17g %.17g" % (it, t, inc, t * full)
        lines.append(line)
        log.info(line)
        if callback is not None:
            callback(it, t, inc, t * full)
        v = v_next
        scale = max(float(np.abs(v).max()), 1e-300)
        if t == 1.0 and inc <= opts.tolerance * scale:
            converged = True
            break
        clamped = clamped + 1 if t < 1.0 else 0
        if clamped >= opts.clamp_patience:
            message = "clamp active: tau < 1 for %d consecutive iterations; use continuation" % clamped
            break
    if converged:
        message = "converged"
    elif not message:
        message = "max_iterations reached"

    return _report(v, rho, grid, it, converged, message, opts.tolerance,
                   {"tau_history": taus, "increments": increments, "log": lines,
                    "policy": policy}, "fixed_point")


def _report(u, rho, grid, iterations, converged, message, tol, extra, solver):
    try:
        res = l2(energy_gradient(u, rho, grid), grid)
    except DomainError:
        res = np.inf
        converged = False
        message = message + "; field is not spacelike"
    if converged and not np.isfinite(res):
        converged = False
    core = grid.interior_slice
    try:
        op = assemble(u, grid)
        extra["nondivergence_residual"] = l2(np.where(grid.interior, op.apply(u) - rho, 0.0), grid)
    except DomainError:
        extra["nondivergence_residual"] = np.inf
    extra["divergence_residual"] = res
    from .minimizer import discrete_energy
    return SolveReport(
        u=u, theta=discrete_margin(u, grid), energy=discrete_energy(u, rho, grid),
        residual_norm=res, iterations=iterations, converged=converged, solver=solver,
        grid=grid, tolerance=tol, message=message, sup_bound=float(np.abs(u).max()),
        extra=extra)


@dataclass
class Stage:
    tau: float
    report: SolveReport


def continuation_solve(rho, grid, schedule, boundary=None, solver="fixed_point", policy=None,
                       fp_opts=None, min_opts=None):
    """Solve for ``tau_j rho`` along ``schedule`` with warm starts.

    Boundary data are scaled with the stage factor.  A failed stage stops
    the sweep; the stages completed so far are returned.

    Returns
    -------
    list of Stage
    """
    schedule = [float(s) for s in schedule]
    if not schedule or schedule[-1] != 1.0:
        raise ValueError("continuation schedule must end at 1")
    if any(b <= a for a, b in zip(schedule[:-1], schedule[1:])) or schedule[0] <= 0:
        raise ValueError("continuation schedule must be positive and strictly increasing")
    rho = np.asarray(rho, dtype=float)
    boundary = np.zeros(grid.shape) if boundary is None else np.asarray(boundary, dtype=float)
    stages = []
    u = None
    for s in schedule:
        if solver == "fixed_point":
            rep = fixed_point_solve(s * rho, grid, policy, fp_opts, s * boundary, u0=u)
        elif solver == "minimize":
            rep = minimize(s * rho, grid, min_opts or MinimizeOptions(), s * boundary, u0=u)
        else:
            raise ValueError("continuation solver must be 'fixed_point' or 'minimize'")
        rep.extra["stage_tau"] = s
        stages.append(Stage(s, rep))
        log.info("stage tau=%.6g %s residual %.3e", s, rep.message, rep.residual_norm)
        if not rep.converged:
            break
        u = rep.u
    return stages


def boundary_pairing(u, grid, w):
    """``h^n sum_boundary (-1/2 [div+ DF(D+u) + div- DF(D-u)]) w`` over boundary nodes."""
    fd = flux_divergence(u, grid)
    bnd = ~grid.interior
    return grid.cell_volume * float(np.sum(fd[bnd] * w[bnd]))


def stability_audit(stage1, stage2, rho, grid, factor=10.0):
    """Monotonicity inequality between two continuation stages.

    lhs = h^n sum 1/2 (|D+ w|^2 + |D- w|^2) with ``w = u2 - u1``.
    rhs = (tau2 - tau1) h^n sum_interior rho w + boundary pairing, where the
    boundary pairing is the discrete flux term carried by the scaled far-field
    data (it vanishes on all of R^n).  The tolerance is ``factor`` times the
    Cauchy-Schwarz bound ``||r2 - r1||_2 ||w||_2`` of the residual contribution.
    """
    t1, t2 = stage1.tau, stage2.tau
    u1, u2 = stage1.report.u, stage2.report.u
    rho = np.asarray(rho, dtype=float)
    w = u2 - u1
    core = grid.interior_slice
    dv = grid.cell_volume
    lhs = 0.5 * sum(dv * float(np.sum(D * D)) for D in one_sided_gradients(w, grid))
    bterm = boundary_pairing(u2, grid, w) - boundary_pairing(u1, grid, w)
    rhs = (t2 - t1) * dv * float(np.sum(rho[core] * w[core])) + bterm
    r1 = energy_gradient(u1, t1 * rho, grid)
    r2 = energy_gradient(u2, t2 * rho, grid)
    tol_abs = factor * l2(r2 - r1, grid) * l2(np.where(grid.interior, w, 0.0), grid)
    tol = tol_abs / abs(rhs) if rhs != 0 else tol_abs
    return AuditResult(
        name="tau_stability[%.3g:%.3g]" % (t1, t2), lhs=lhs, rhs=rhs,
        passed=bool(lhs <= rhs + tol_abs), tolerance=tol, kind="bound",
        metadata={"boundary_term": bterm, "tolerance_abs": tol_abs})
