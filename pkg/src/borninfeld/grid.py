"""Uniform Cartesian grids on the box [-L, L]^n and difference operators.

Fields are plain numpy arrays: a scalar field has shape ``grid.shape`` and a
vector field has shape ``(n,) + grid.shape``.  The inner product of two fields
is ``h**n * sum(f * g)`` over all nodes.

The one-sided pairs ``gradient(kind="forward")`` / ``divergence(kind="forward")``
(and likewise ``"backward"``) are exact negative adjoints of each other for
every field, including fields that do not vanish on the boundary.  Where a
neighbour would lie outside the box the one-sided difference is set to zero.
"""

from dataclasses import dataclass
from functools import cached_property
from math import gamma, pi

import numpy as np
from scipy import fft

from .errors import DomainError


def unit_ball_volume(n):
    """Volume of the unit ball in R^n."""
    return pi ** (n / 2) / gamma(n / 2 + 1)


def sphere_area(n):
    """Area of the unit sphere in R^n, equal to n * omega_n."""
    return n * unit_ball_volume(n)


@dataclass(frozen=True)
class Grid:
    half_width: float
    cells: int
    n: int = 3

    def __post_init__(self):
        if self.cells < 8:
            raise ValueError("cells per axis must be at least 8, got %d" % self.cells)
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if self.n < 1:
            raise ValueError("dimension must be positive")

    @property
    def h(self):
        return 2.0 * self.half_width / self.cells

    @property
    def shape(self):
        return (self.cells + 1,) * self.n

    @property
    def cell_volume(self):
        return self.h ** self.n

    @cached_property
    def axis(self):
        return -self.half_width + self.h * np.arange(self.cells + 1)

    @cached_property
    def coords(self):
        """Node coordinates, shape ``(n,) + shape``."""
        return np.stack(np.meshgrid(*([self.axis] * self.n), indexing="ij"))

    def radius(self, center=None):
        x = self.coords
        if center is not None:
            x = x - np.asarray(center, dtype=float).reshape((self.n,) + (1,) * self.n)
        return np.sqrt(np.einsum("i...,i...->...", x, x))

    @cached_property
    def interior(self):
        """Boolean mask of interior nodes."""
        mask = np.zeros(self.shape, dtype=bool)
        mask[(slice(1, -1),) * self.n] = True
        return mask

    @property
    def interior_slice(self):
        return (slice(1, -1),) * self.n

    @property
    def interior_shape(self):
        return (self.cells - 1,) * self.n

    def inner(self, f, g):
        return self.cell_volume * float(np.sum(f * g))


def _sl(ndim, axis, s):
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def gradient(u, grid, kind="forward"):
    """Discrete gradient of a scalar field.

    ``kind`` is ``"forward"``, ``"backward"`` (one-sided, zero where the
    neighbour is missing) or ``"centered"`` (second-order, one-sided
    second-order stencils on the boundary; for reporting only).
    """
    u = np.asarray(u, dtype=float)
    n, h = grid.n, grid.h
    out = np.zeros((n,) + u.shape)
    for k in range(n):
        if kind == "forward":
            out[k][_sl(n, k, slice(0, -1))] = np.diff(u, axis=k) / h
        elif kind == "backward":
            out[k][_sl(n, k, slice(1, None))] = np.diff(u, axis=k) / h
        elif kind == "centered":
            out[k] = np.gradient(u, h, axis=k, edge_order=2)
        else:
            raise ValueError("unknown gradient kind %r" % (kind,))
    return out


def divergence(F, grid, kind="forward"):
    """Negative adjoint of ``gradient(., kind)`` for the node inner product."""
    F = np.asarray(F, dtype=float)
    n, h = grid.n, grid.h
    out = np.zeros(F.shape[1:])
    for k in range(n):
        Fk = F[k]
        if kind == "forward":
            inner = Fk[_sl(n, k, slice(0, -1))]
            out[_sl(n, k, slice(0, -1))] += inner / h
            out[_sl(n, k, slice(1, None))] -= inner / h
        elif kind == "backward":
            inner = Fk[_sl(n, k, slice(1, None))]
            out[_sl(n, k, slice(1, None))] -= inner / h
            out[_sl(n, k, slice(0, -1))] += inner / h
        else:
            raise ValueError("divergence is defined for 'forward' and 'backward' only")
    return out


def second_derivatives(u, grid):
    """Centered second differences, shape ``(n, n) + shape``, zero on the boundary.

    Diagonal entries use the three-point stencil, mixed entries the
    four-corner stencil; both are exact for quadratics.
    """
    u = np.asarray(u, dtype=float)
    n, h = grid.n, grid.h
    out = np.zeros((n, n) + u.shape)
    core = grid.interior_slice

    def shifted(offsets):
        idx = tuple(slice(1 + o, u.shape[d] - 1 + o) for d, o in enumerate(offsets))
        return u[idx]

    zero = [0] * n
    for i in range(n):
        e = list(zero)
        e[i] = 1
        p = shifted(e)
        e[i] = -1
        q = shifted(e)
        out[i, i][core] = (p - 2.0 * u[core] + q) / h ** 2
        for j in range(i + 1, n):
            vals = []
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                e = list(zero)
                e[i], e[j] = si, sj
                vals.append(shifted(e))
            mixed = (vals[0] - vals[1] - vals[2] + vals[3]) / (4.0 * h ** 2)
            out[i, j][core] = mixed
            out[j, i][core] = mixed
    return out


def laplacian(u, grid):
    """Standard (2n+1)-point Laplacian on interior nodes, zero on the boundary."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    core = grid.interior_slice
    acc = -2.0 * grid.n * u[core]
    for k in range(grid.n):
        acc = acc + u[_sl(grid.n, k, slice(2, None))][_interior_except(grid.n, k)]
        acc = acc + u[_sl(grid.n, k, slice(0, -2))][_interior_except(grid.n, k)]
    out[core] = acc / grid.h ** 2
    return out


def _interior_except(n, axis):
    idx = [slice(1, -1)] * n
    idx[axis] = slice(None)
    return tuple(idx)


class PoissonSolver:
    """Fast solver for -Laplacian x = b on interior nodes, zero Dirichlet data.

    Uses the type-I discrete sine transform, which diagonalizes the
    (2n+1)-point Laplacian exactly.
    """

    def __init__(self, grid):
        self.grid = grid
        m = grid.cells
        j = np.arange(1, m)
        lam1 = (2.0 - 2.0 * np.cos(np.pi * j / m)) / grid.h ** 2
        lam = np.zeros(grid.interior_shape)
        for k in range(grid.n):
            shape = [1] * grid.n
            shape[k] = m - 1
            lam = lam + lam1.reshape(shape)
        self.eigenvalues = lam

    def solve(self, b):
        """``b`` has the interior shape; returns an array of the same shape."""
        bh = fft.dstn(b, type=1, norm="ortho")
        return fft.idstn(bh / self.eigenvalues, type=1, norm="ortho")


def harmonic_lift(boundary, grid, solver=None):
    """Discrete harmonic extension of the boundary values of ``boundary``."""
    b = np.array(boundary, dtype=float)
    b[grid.interior_slice] = 0.0
    solver = solver or PoissonSolver(grid)
    # -Lap(b + x) = 0 on the interior, x = 0 on the boundary
    rhs = laplacian(b, grid)[grid.interior_slice]
    b[grid.interior_slice] = solver.solve(rhs)
    return b


def lp_norm(f, grid, p):
    """Grid L^p norm ``(h^n sum |f|^p)^(1/p)``; ``p = inf`` gives ``max |f|``."""
    if p != np.inf and p < 1:
        raise DomainError("p must satisfy 1 <= p <= inf, got %r" % (p,))
    a = np.abs(np.asarray(f, dtype=float))
    if p == np.inf:
        return float(a.max()) if a.size else 0.0
    return float((grid.cell_volume * np.sum(a ** p)) ** (1.0 / p))


def ball_mask(grid, x0, R):
    x0 = np.zeros(grid.n) if x0 is None else np.asarray(x0, dtype=float)
    return grid.radius(x0) <= R


def ball_average(f, grid, x0, R, p=1):
    """Mean p-power average ``(mean |f|^p)^(1/p)`` over nodes in B(x0, R).

    ``p = inf`` gives the maximum of ``|f|`` over the ball.
    """
    if p != np.inf and p < 1:
        raise DomainError("p must satisfy 1 <= p <= inf, got %r" % (p,))
    mask = ball_mask(grid, x0, R)
    if not mask.any():
        raise DomainError("ball B(%s, %g) contains no grid nodes" % (x0, R))
    a = np.abs(np.asarray(f, dtype=float))[mask]
    if p == np.inf:
        return float(a.max())
    return float(np.mean(a ** p) ** (1.0 / p))


def newtonian_coefficient(n):
    """c_n = 1 / ((n - 2) n omega_n), so that -Lap(c_n |x|^(2-n)) = delta_0."""
    if n < 3:
        raise DomainError("far-field data requires n >= 3")
    return 1.0 / ((n - 2) * sphere_area(n))


def far_field_dirichlet(total_charge, grid, center=None):
    """Boundary data ``Q c_n |x - center|^(2-n)`` on boundary nodes, zero inside.

    With the equation written as ``-div(DF(Du)) = rho`` the far field of a
    positive total charge is a positive potential.
    """
    data = np.zeros(grid.shape)
    if total_charge == 0:
        return data
    r = grid.radius(center)
    bnd = ~grid.interior
    data[bnd] = total_charge * newtonian_coefficient(grid.n) * r[bnd] ** (2 - grid.n)
    return data

