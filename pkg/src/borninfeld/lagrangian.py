"""Pointwise algebra of the electrostatic Born-Infeld Lagrangian.

    F(xi) = 1 - sqrt(1 - |xi|^2)

together with its gradient, Hessian, the tilt factor nu = 1/sqrt(1 - |xi|^2)
and the normalized matrix A = nu^-3 D^2F = nu^-2 I + xi (x) xi.

All functions accept a single vector of shape ``(n,)`` or a stack of vectors
of shape ``(..., n)``; the last axis is always the vector index.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

#: arguments with 1 < |xi| <= 1 + LIGHT_CONE_TOL are clamped to the sphere in eval_f
LIGHT_CONE_TOL = 1e-12


@dataclass(frozen=True)
class SpacelikeVector:
    """A gradient value together with its distance from the light cone."""

    xi: np.ndarray
    margin: float


@dataclass(frozen=True)
class LagrangianEval:
    f: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    nu: np.ndarray
    a: np.ndarray


def _sq_norm(xi):
    xi = np.asarray(xi, dtype=float)
    return xi, np.einsum("...i,...i->...", xi, xi)


def eval_f(xi):
    """Energy density F(xi).

    Raises
    ------
    DomainError
        If ``|xi|`` exceeds 1 by more than ``LIGHT_CONE_TOL``.
    """
    xi, s = _sq_norm(xi)
    if np.any(s > (1.0 + LIGHT_CONE_TOL) ** 2):
        raise DomainError("non-spacelike argument: |xi| = %.17g > 1" % np.sqrt(s.max()))
    return 1.0 - np.sqrt(np.clip(1.0 - s, 0.0, None))


def _nu(s):
    if np.any(s >= 1.0):
        raise DomainError(
            "non-spacelike argument: |xi| = %.17g >= 1 (nu is infinite)" % np.sqrt(np.max(s))
        )
    return 1.0 / np.sqrt(1.0 - s)


def eval_nu(xi):
    xi, s = _sq_norm(xi)
    return _nu(s)


def eval_grad(xi):
    """Flux DF(xi) = nu * xi."""
    xi, s = _sq_norm(xi)
    return _nu(s)[..., None] * xi


def eval_full(xi):
    """Evaluate F, DF, D^2F, nu and A at ``xi``; nu is computed once."""
    xi, s = _sq_norm(xi)
    nu = _nu(s)
    n = xi.shape[-1]
    eye = np.eye(n)
    outer = xi[..., :, None] * xi[..., None, :]
    nu_ = nu[..., None, None]
    hess = nu_ * eye + nu_ ** 3 * outer
    a = eye / nu_ ** 2 + outer
    f = 1.0 - 1.0 / nu
    return LagrangianEval(f=f, grad=nu[..., None] * xi, hess=hess, nu=nu, a=a)


def project_spacelike(xi, margin):
    """Radially project ``xi`` into the ball of radius ``1 - margin``."""
    if not 0.0 < margin < 1.0:
        raise ValueError("margin must lie in (0, 1), got %r" % (margin,))
    xi = np.asarray(xi, dtype=float)
    r = np.linalg.norm(xi, axis=-1)
    cap = 1.0 - margin
    scale = np.where(r > cap, cap / np.where(r > 0, r, 1.0), 1.0)
    out = xi * scale[..., None]
    # rounding can leave |out| one ulp above the cap; shrink until it is not,
    # so a second projection is the identity
    for _ in range(8):
        over = np.linalg.norm(out, axis=-1) > cap
        if not np.any(over):
            break
        scale = np.where(over, np.nextafter(scale, 0.0), scale)
        out = xi * scale[..., None]
    return SpacelikeVector(xi=out, margin=margin)


def monotonicity_gap(xi1, xi2):
    """<DF(xi2) - DF(xi1), xi2 - xi1> - |xi2 - xi1|^2, which is never negative."""
    xi1 = np.asarray(xi1, dtype=float)
    xi2 = np.asarray(xi2, dtype=float)
    d = xi2 - xi1
    gap = np.einsum("...i,...i->...", eval_grad(xi2) - eval_grad(xi1), d)
    return gap - np.einsum("...i,...i->...", d, d)
