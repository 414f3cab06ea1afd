import re

import numpy as np
import pytest

from borninfeld import fixed_point as fp
from borninfeld import grid as g
from borninfeld import minimizer as mn
from borninfeld.density import sample_density
from borninfeld.errors import LinearSolveError
from borninfeld.suite import small_data_suite


def test_assemble_at_zero_is_identity():
    G = g.Grid(1.0, 8)
    op = fp.assemble(np.zeros(G.shape), G)
    eye = np.eye(3)[:, :, None, None, None]
    np.testing.assert_array_equal(op.coefficients, np.broadcast_to(eye, op.coefficients.shape))
    np.testing.assert_array_equal(op.nu, 1.0)


def test_assemble_affine_field():
    G = g.Grid(1.0, 8)
    xi = np.array([0.6, 0.0, 0.0])
    op = fp.assemble(0.6 * G.coords[0], G)
    nu = 1.25
    want = nu * np.eye(3) + nu ** 3 * np.outer(xi, xi)
    np.testing.assert_allclose(op.coefficients[:, :, 3, 4, 5], want, rtol=1e-13)
    np.testing.assert_allclose(op.nu, nu, rtol=1e-13)


def test_coefficient_eigenvalues_in_range(rng):
    G = g.Grid(1.0, 8)
    v = 0.01 * rng.normal(size=G.shape)
    op = fp.assemble(v, G)
    a = np.moveaxis(op.coefficients.reshape(3, 3, -1), -1, 0)
    lam = np.linalg.eigvalsh(a)
    nu = op.nu.ravel()
    # nu I + nu^3 xi xi has spectrum [nu, nu^3]
    assert np.all(lam >= nu[:, None] * (1 - 1e-12))
    assert np.all(lam <= nu[:, None] ** 3 * (1 + 1e-12))


def test_quadratic_is_exact_for_laplacian():
    G = g.Grid(1.0, 12)
    exact = G.radius() ** 2
    op = fp.assemble(np.zeros(G.shape), G)
    u = fp.linear_solve(op, np.full(G.shape, -6.0), exact, tol=1e-12)
    assert np.abs(u - exact).max() < 1e-9


@pytest.mark.parametrize("pre", ["laplace", "diagonal"])
def test_manufactured_solution_second_order(pre):
    errs = []
    for m in (16, 32):
        G = g.Grid(1.0, m)
        x, y, z = G.coords
        exact = np.sin(x) * np.cosh(0.5 * y) + 0.3 * x * z
        # frozen coefficients of a smooth non-radial field
        op = fp.assemble(0.2 * np.sin(x + y) + 0.1 * z ** 2, G)
        # mu from the continuum operator applied to the exact solution
        d2 = np.zeros((3, 3) + G.shape)
        d2[0, 0] = -np.sin(x) * np.cosh(0.5 * y)
        d2[1, 1] = 0.25 * np.sin(x) * np.cosh(0.5 * y)
        d2[0, 1] = d2[1, 0] = 0.5 * np.cos(x) * np.sinh(0.5 * y)
        d2[0, 2] = d2[2, 0] = 0.3
        mu = -np.einsum("ij...,ij...->...", op.coefficients, d2)
        u = fp.linear_solve(op, mu, exact, preconditioner=pre, maxiter=200)
        errs.append(np.abs(u - exact).max())
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_gmres_failure_reports_history():
    G = g.Grid(1.0, 16)
    op = fp.assemble(0.1 * np.sin(3 * G.coords[0] * G.coords[1]), G)
    with pytest.raises(LinearSolveError) as exc:
        fp.linear_solve(op, np.ones(G.shape), tol=1e-14, restart=2, maxiter=1, preconditioner="diagonal")
    assert len(exc.value.history) >= 1
    assert "GMRES" in str(exc.value)


@pytest.mark.parametrize("full, far, theta, want", [
    (0.3, 0.0, 0.1, 1.0),
    (1.8, 0.0, 0.2, 0.5),
    (0.0, 0.0, 0.1, 1.0),
    (0.5, 0.95, 0.1, 0.9 / 0.95),
])
def test_tau_examples(full, far, theta, want):
    assert fp.tau_from_norms(full, far, fp.TauPolicy(theta=theta)) == pytest.approx(want, rel=1e-15)


def test_tau_scales_gradient_into_cap(rng):
    G = g.Grid(1.0, 8)
    v = 2.0 * G.coords[0] + 0.1 * rng.normal(size=G.shape)
    policy = fp.TauPolicy(theta=0.2)
    t = fp.tau(v, G, policy)
    full, _ = fp.gradient_norms(t * v, G)
    assert full == pytest.approx(policy.grad_cap, rel=1e-12)


def test_policy_validation():
    with pytest.raises(ValueError):
        fp.TauPolicy(theta=1.0)
    with pytest.raises(ValueError):
        fp.TauPolicy(far_cap=0.0)


def test_zero_density_single_iteration():
    G = g.Grid(1.0, 8)
    rep = fp.fixed_point_solve(np.zeros(G.shape), G)
    assert rep.converged and rep.iterations == 1
    assert np.all(rep.u == 0.0)
    assert rep.extra["tau_history"] == [1.0]


@pytest.fixture(scope="module")
def gaussian_run():
    G = g.Grid(4.0, 24)
    rho = sample_density(small_data_suite()["gaussian"], G)
    return G, rho, fp.fixed_point_solve(rho, G)


def test_small_data_undamped_and_contracting(gaussian_run):
    G, rho, rep = gaussian_run
    assert rep.converged, rep.message
    assert all(t == 1.0 for t in rep.extra["tau_history"])
    inc = rep.extra["increments"]
    ratios = [b / a for a, b in zip(inc[1:], inc[2:]) if a > 0]
    assert max(ratios) < 0.7
    assert rep.extra["divergence_residual"] == rep.residual_norm
    assert np.isfinite(rep.extra["nondivergence_residual"])


def test_log_line_format(gaussian_run):
    lines = gaussian_run[2].extra["log"]
    pat = re.compile(r"^iter (\d+) (\S+) (\S+) (\S+)$")
    for k, line in enumerate(lines, 1):
        mt = pat.match(line)
        assert mt and int(mt.group(1)) == k
        assert all(np.isfinite(float(mt.group(i))) for i in (2, 3, 4))


def test_agrees_with_minimizer(gaussian_run):
    G, rho, rep = gaussian_run
    ref = mn.minimize(rho, G)
    Dm = g.gradient(ref.u, G, "centered")
    Df = g.gradient(rep.u, G, "centered")
    # the two discretizations differ by O(h^2)
    assert np.sqrt(np.sum((Dm - Df) ** 2) / np.sum(Dm ** 2)) < 5e-3


def test_continuation_single_stage_matches_direct(gaussian_run):
    G, rho, rep = gaussian_run
    stages = fp.continuation_solve(rho, G, [1.0])
    assert len(stages) == 1
    np.testing.assert_array_equal(stages[0].report.u, rep.u)


def test_continuation_stage_matches_direct_half_solve(gaussian_run):
    G, rho, rep = gaussian_run
    stages = fp.continuation_solve(rho, G, [0.5, 1.0])
    assert [s.tau for s in stages] == [0.5, 1.0]
    half = fp.fixed_point_solve(0.5 * rho, G)
    scale = np.abs(half.u).max()
    assert np.abs(stages[0].report.u - half.u).max() <= 1e-8 * scale
    assert np.abs(stages[1].report.u - rep.u).max() <= 1e-8 * np.abs(rep.u).max()
    audit = fp.stability_audit(stages[0], stages[1], rho, G)
    assert audit.passed and audit.lhs > 0


def test_continuation_schedule_validation():
    G = g.Grid(1.0, 8)
    with pytest.raises(ValueError, match="end at 1"):
        fp.continuation_solve(np.zeros(G.shape), G, [0.5])
    with pytest.raises(ValueError, match="increasing"):
        fp.continuation_solve(np.zeros(G.shape), G, [0.5, 0.5, 1.0])


def test_clamp_reported_for_strong_data():
    # far beyond the small-data regime the update is clamped every step
    G = g.Grid(2.0, 16)
    rho = 200.0 * np.exp(-G.radius() ** 2 / 0.1)
    rep = fp.fixed_point_solve(rho, G, opts=fp.FixedPointOptions(clamp_patience=3))
    assert not rep.converged
    assert rep.extra["tau_history"][0] < 1.0
