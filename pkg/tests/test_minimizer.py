import numpy as np
import pytest

from borninfeld import grid as g
from borninfeld import minimizer as mn
from borninfeld.density import ChargeDensity, Term, sample_density
from borninfeld.errors import DomainError


@pytest.fixture
def small():
    G = g.Grid(2.0, 16)
    rho = sample_density(ChargeDensity((Term("gaussian", (0.2, 0, -0.1), {"sigma": 0.5, "weight": 2.0}),)), G)
    return G, rho


def test_energy_of_zero_field_is_zero(small):
    G, rho = small
    assert mn.discrete_energy(np.zeros(G.shape), rho, G) == 0.0


def test_energy_infinite_outside_cone():
    G = g.Grid(1.0, 8)
    u = 2.0 * G.coords[0]
    assert mn.discrete_energy(u, np.zeros(G.shape), G) == np.inf
    with pytest.raises(DomainError, match="gradient margin violated at node"):
        mn.flux_divergence(u, G)


def test_gradient_matches_directional_derivative(small, rng):
    G, rho = small
    u = np.zeros(G.shape)
    u[G.interior_slice] = 0.05 * rng.normal(size=G.interior_shape)
    u = g.harmonic_lift(np.zeros(G.shape), G) + 0.3 * u
    d = np.zeros(G.shape)
    d[G.interior_slice] = rng.normal(size=G.interior_shape)
    eps = 1e-5
    fd = (mn.discrete_energy(u + eps * d, rho, G) - mn.discrete_energy(u - eps * d, rho, G)) / (2 * eps)
    an = G.cell_volume * np.sum(mn.energy_gradient(u, rho, G) * d)
    assert fd == pytest.approx(an, rel=1e-6)


def test_hessian_diagonal_matches_finite_difference(small, rng):
    G, rho = small
    u = np.zeros(G.shape)
    u[G.interior_slice] = 0.02 * rng.normal(size=G.interior_shape)
    diag = mn.hessian_diagonal(u, G)
    node = (5, 7, 9)
    e = np.zeros(G.shape)
    e[node] = 1.0
    eps = 1e-6
    fd = (mn.energy_gradient(u + eps * e, rho, G)[node] - mn.energy_gradient(u - eps * e, rho, G)[node]) / (2 * eps)
    assert diag[node] == pytest.approx(fd, rel=1e-5)


def test_zero_density_gives_zero_field():
    G = g.Grid(1.0, 8)
    rep = mn.minimize(np.zeros(G.shape), G)
    assert rep.converged and rep.iterations == 0
    assert np.all(rep.u == 0.0)
    assert rep.theta == 1.0


def test_converges_with_monotone_energy(small):
    G, rho = small
    rep = mn.minimize(rho, G)
    assert rep.converged, rep.message
    assert rep.residual_norm <= rep.tolerance
    energies = [h[1] for h in rep.history]
    assert all(b <= a + 1e-12 * abs(a) for a, b in zip(energies, energies[1:]))
    assert rep.theta >= 1e-6
    assert mn.discrete_margin(rep.u, G) == pytest.approx(rep.theta)
    # minimum is below the zero-field energy
    assert rep.energy < 0.0


def test_uniqueness_probe(small):
    G, rho = small
    opts = mn.MinimizeOptions(gradient_tolerance=1e-9)
    a = mn.minimize(rho, G, opts)
    b = mn.minimize(rho, G, mn.MinimizeOptions(gradient_tolerance=1e-9, init="newton"))
    assert a.converged and b.converged
    assert mn.l2(a.u - b.u, G) <= 10 * opts.gradient_tolerance


def test_boundary_data_respected(small):
    G, rho = small
    bnd = g.far_field_dirichlet(-1.0, G)
    rep = mn.minimize(rho, G, boundary=bnd)
    edge = ~G.interior
    np.testing.assert_array_equal(rep.u[edge], bnd[edge])


def test_linear_regime_matches_poisson():
    # for tiny data the Born-Infeld operator is the Laplacian up to O(|Du|^3)
    G = g.Grid(2.0, 16)
    rho = 1e-3 * np.exp(-G.radius() ** 2)
    rep = mn.minimize(rho, G, mn.MinimizeOptions(gradient_tolerance=1e-14))
    lin = np.zeros(G.shape)
    lin[G.interior_slice] = g.PoissonSolver(G).solve(rho[G.interior_slice])
    assert np.abs(rep.u - lin).max() <= 1e-6 * np.abs(lin).max()


def test_iteration_budget_flagged(small):
    G, rho = small
    rep = mn.minimize(rho, G, mn.MinimizeOptions(max_iterations=2))
    assert not rep.converged
    assert rep.message == "max_iterations reached"
    assert rep.iterations == 2


def test_infeasible_start_rejected(small):
    G, rho = small
    with pytest.raises(DomainError):
        mn.minimize(rho, G, u0=3.0 * G.coords[0])


def test_options_validation():
    with pytest.raises(ValueError):
        mn.MinimizeOptions(margin=0.5)
    with pytest.raises(ValueError):
        mn.MinimizeOptions(gradient_tolerance=0.0)
    with pytest.raises(ValueError):
        mn.MinimizeOptions(method="bfgs")


@pytest.mark.parametrize("pre", ["scaled", "laplace"])
def test_preconditioners_agree(small, pre):
    G, rho = small
    ref = mn.minimize(rho, G, mn.MinimizeOptions(gradient_tolerance=1e-10))
    rep = mn.minimize(rho, G, mn.MinimizeOptions(gradient_tolerance=1e-10, preconditioner=pre))
    assert rep.converged
    assert np.abs(rep.u - ref.u).max() < 1e-8


def test_sparse_hessian_matches_operator_and_diagonal(small, rng):
    G, rho = small
    u = np.zeros(G.shape)
    u[G.interior_slice] = 0.02 * rng.normal(size=G.interior_shape)
    ev = mn._Evaluation(u, G)
    H = ev.hessian_matrix()
    assert abs(H - H.T).max() <= 1e-12 * abs(H).max()
    d = np.zeros(G.shape)
    d[G.interior_slice] = rng.normal(size=G.interior_shape)
    Hd = ev.hessian_apply(d)[G.interior_slice].ravel()
    np.testing.assert_allclose(H @ d[G.interior_slice].ravel(), Hd, rtol=0, atol=1e-12 * np.abs(Hd).max())
    np.testing.assert_allclose(H.diagonal(), ev.hessian_diagonal()[G.interior_slice].ravel(), rtol=1e-12)


def test_newton_agrees_with_lbfgs(small):
    G, rho = small
    bnd = g.far_field_dirichlet(-1.0, G)
    ref = mn.minimize(rho, G, mn.MinimizeOptions(gradient_tolerance=1e-10), boundary=bnd)
    rep = mn.minimize(rho, G, mn.MinimizeOptions(gradient_tolerance=1e-10, method="newton"), boundary=bnd)
    assert rep.converged, rep.message
    assert np.abs(rep.u - ref.u).max() < 1e-8
