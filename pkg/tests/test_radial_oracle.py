import numpy as np
import pytest
from scipy.special import erf

from borninfeld import radial_oracle as ro
from borninfeld.grid import sphere_area

# int_0^inf dt / sqrt(1 + t^4) = Gamma(1/4)^2 / (4 sqrt(pi))
W10_INF = 1.8540746773013719


def gaussian_rho(Q=-4 * np.pi, sigma=0.1):
    prof = lambda r: Q * np.exp(-np.asarray(r) ** 2 / (2 * sigma ** 2)) / (2 * np.pi * sigma ** 2) ** 1.5
    return ro.RadialDensity(prof, 12 * sigma)


def gaussian_enclosed(Q, sigma, r):
    """Charge inside B(0, r) for the normalized Gaussian in R^3."""
    return Q * (erf(r / (np.sqrt(2) * sigma)) - np.sqrt(2 / np.pi) * r / sigma * np.exp(-r ** 2 / (2 * sigma ** 2)))


def test_cumulative_charge_constant_density():
    rho = ro.constant_density(2.5, 4.0)
    for r in (0.0, 0.3, 1.7, 4.0):
        assert ro.cumulative_charge(rho, 3, r) == pytest.approx(2.5 * r ** 3 / 3, rel=1e-12, abs=1e-15)
    assert ro.cumulative_charge(ro.zero_density(), 3, 2.0) == 0.0


def test_cumulative_charge_gaussian_closed_form():
    rho = gaussian_rho(Q=2.0, sigma=0.3)
    for r in (0.1, 0.5, 1.0):
        assert sphere_area(3) * ro.cumulative_charge(rho, 3, r) == pytest.approx(
            gaussian_enclosed(2.0, 0.3, r), abs=1e-9)


def test_slope_matches_barrier_integrand():
    a, lam = 0.7, 1.3
    rho = ro.constant_density(lam, 10.0, point_charge=-sphere_area(3) * a)
    for t in (0.05, 0.5, 1.2, 3.0):
        G = a - lam * t ** 3 / 3
        assert ro.radial_slope(rho, 3, t) == pytest.approx(G / np.sqrt(t ** 4 + G ** 2), rel=1e-10)
    assert ro.radial_slope(ro.zero_density(), 3, 1.0) == 0.0


def test_barrier_inf_value_and_normalization():
    assert ro.barrier_w(1.0, 0.0, 3, np.inf) == pytest.approx(W10_INF, rel=1e-12)
    assert ro.barrier_w(1.0, 2.0, 3, 0.0) == 0.0
    assert ro.barrier_w(0.0, 0.0, 3, 5.0) == 0.0


def test_barrier_derivative_is_slope():
    a, lam = 1.0, 0.5
    rho = ro.constant_density(lam, 10.0, point_charge=-sphere_area(3) * a)
    errs = []
    for h in (1e-2, 5e-3):
        r = 0.8
        fd = (ro.barrier_w(a, lam, 3, r + h) - ro.barrier_w(a, lam, 3, r - h)) / (2 * h)
        errs.append(abs(fd - ro.radial_slope(rho, 3, r)))
    assert errs[1] < 1e-5
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_point_charge_value_at_origin():
    rho = ro.RadialDensity(lambda r: np.zeros_like(np.asarray(r, float)), 1.0, point_charge=-4 * np.pi)
    assert ro.radial_value(rho, 3, 0.0) == pytest.approx(-W10_INF, rel=1e-10)
    sol = ro.RadialSolution(rho)
    assert sol.value(np.array([0.0]))[0] == pytest.approx(-W10_INF, rel=1e-10)


def test_value_vanishes_at_infinity_with_newtonian_tail():
    rho = gaussian_rho(Q=1.0, sigma=0.5)
    vals = np.array([ro.radial_value(rho, 3, r) for r in (10.0, 20.0, 40.0)])
    scaled = vals * np.array([10.0, 20.0, 40.0])
    assert scaled.min() > 0
    assert abs(scaled[2] - 1 / (4 * np.pi)) < abs(scaled[0] - 1 / (4 * np.pi)) + 1e-12
    assert abs(ro.radial_value(rho, 3, 1e6)) < 1e-6


def test_tabulated_solution_matches_quadrature():
    rho = gaussian_rho()
    sol = ro.RadialSolution(rho)
    r = np.array([0.0, 0.05, 0.3, 1.0, 3.0, 15.0])
    ref = np.array([ro.radial_value(rho, 3, x) for x in r])
    np.testing.assert_allclose(sol.value(r), ref, rtol=1e-9, atol=1e-11)


def test_flux_of_unit_barrier_is_4pi():
    rho = ro.RadialDensity(lambda r: np.zeros_like(np.asarray(r, float)), 1.0, point_charge=-4 * np.pi)
    sol = ro.RadialSolution(rho)
    np.testing.assert_allclose(ro.flux(sol, np.array([0.01, 0.5, 2.0, 50.0])), 4 * np.pi, rtol=1e-12)
    zero = ro.RadialSolution(ro.zero_density())
    assert np.all(zero.flux(np.array([0.5, 3.0])) == 0.0)


def test_flux_balances_enclosed_charge():
    Q = 3.0
    sol = ro.RadialSolution(gaussian_rho(Q=Q, sigma=0.4))
    r = np.array([0.2, 0.6, 1.5, 5.0])
    np.testing.assert_allclose(sol.flux(r), -gaussian_enclosed(Q, 0.4, r), atol=1e-9)
    assert sol.total_charge == pytest.approx(Q, rel=1e-12)


def test_strictly_spacelike_and_conelike():
    sol = ro.RadialSolution(gaussian_rho())
    r = np.geomspace(1e-4, 100, 400)
    assert np.abs(sol.slope(r)).max() < 1
    pc = ro.RadialSolution(ro.RadialDensity(lambda r: np.zeros_like(np.asarray(r, float)), 1.0,
                                            point_charge=-4 * np.pi))
    assert abs(pc.slope(np.array([1e-6]))[0]) == pytest.approx(1.0, abs=1e-11)


def test_ode_residual():
    """d/dr (r^2 nu u') + rho r^2 = 0 at sampled radii."""
    rho = gaussian_rho(Q=2.0, sigma=0.3)
    sol = ro.RadialSolution(rho)
    r = np.linspace(0.05, 2.0, 100)
    h = 1e-4
    flux_r = lambda x: x ** 2 * sol.nu(x) * sol.slope(x)
    d = (flux_r(r + h) - flux_r(r - h)) / (2 * h)
    np.testing.assert_allclose(d + rho(r) * r ** 2, 0.0, atol=1e-6)


def test_barrier_tends_to_cone():
    r = np.linspace(0.1, 5.0, 12)
    prev = np.array([ro.barrier_w(1.0, 0.5, 3, x) for x in r])
    for a in (10.0, 100.0, 1000.0):
        cur = np.array([ro.barrier_w(a, 0.5, 3, x) for x in r])
        assert np.all(cur >= prev - 1e-12)
        assert np.all(cur <= r + 1e-12)
        prev = cur
    assert np.abs(prev - r).max() < 0.01


def test_barrier_equals_radial_value_up_to_constant():
    a, lam, R = 0.8, 0.4, 2.0
    rho = ro.constant_density(lam, R, point_charge=-sphere_area(3) * a)
    sol = ro.RadialSolution(rho)
    r = np.array([0.2, 0.7, 1.4, 2.0])
    w = np.array([ro.barrier_w(a, lam, 3, x) for x in r])
    u = sol.value(r)
    u0 = sol.value(np.array([0.0]))[0]
    np.testing.assert_allclose(w, u - u0, atol=1e-9)


def test_errors():
    with pytest.raises(ValueError):
        ro.radial_slope(ro.zero_density(), 3, 0.0)
    with pytest.raises(ValueError):
        ro.barrier_w(1.0, 1.0, 3, np.inf)
    with pytest.raises(ValueError):
        ro.cumulative_charge(ro.zero_density(), 3, -1.0)


def test_other_dimensions():
    # n = 5, a = 1: w(inf) = int dt / sqrt(t^8 + 1)
    from scipy.integrate import quad
    ref = quad(lambda t: 1 / np.sqrt(t ** 8 + 1), 0, np.inf, epsabs=1e-13)[0]
    assert ro.barrier_w(1.0, 0.0, 5, np.inf) == pytest.approx(ref, rel=1e-10)
    rho = ro.RadialDensity(lambda r: np.zeros_like(np.asarray(r, float)), 1.0, point_charge=-sphere_area(5))
    assert ro.RadialSolution(rho, n=5).value(np.array([0.0]))[0] == pytest.approx(-ref, rel=1e-9)
