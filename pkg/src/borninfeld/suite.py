"""Shipped test densities.

``small_data_suite`` holds moderate densities on the box [-4, 4]^3 whose
solutions stay well away from the light cone; the solver-agreement and
audit tests run on all of them.  ``point_charge_test`` is the mollified unit
point charge used for the oracle convergence study.
"""

from .density import ChargeDensity, Term
from .grid import sphere_area

SUITE_HALF_WIDTH = 4.0
ORIGIN = (0.0, 0.0, 0.0)


def small_data_suite():
    return {
        "gaussian": ChargeDensity((Term("gaussian", ORIGIN, {"sigma": 0.5, "weight": 4.0}),), 3, (4.0,)),
        "offset_gaussian": ChargeDensity(
            (Term("gaussian", (0.5, -0.3, 0.2), {"sigma": 0.6, "weight": 3.0}),), 3, (4.0,)),
        "dipole": ChargeDensity((
            Term("gaussian", (0.8, 0.0, 0.0), {"sigma": 0.4, "weight": 2.0}),
            Term("gaussian", (-0.8, 0.0, 0.0), {"sigma": 0.4, "weight": -2.0})), 3, (4.0,)),
        "ball": ChargeDensity((Term("ball_constant", ORIGIN, {"radius": 1.0, "value": 0.75}),), 3, (4.0,)),
        "power_bump": ChargeDensity(
            (Term("radial_power_bump", ORIGIN, {"radius": 1.0, "exponent": 0.5, "value": 0.75}),), 3, (4.0,)),
        "bump_point": ChargeDensity(
            (Term("mollified_point", ORIGIN, {"sigma": 1.0, "charge": 2.5, "kernel": "bump"}),), 3, (4.0,)),
    }


def point_charge_test(sigma=0.1, a_eff=1.0, kernel="gaussian", n=3):
    """Mollified point charge with slope parameter ``a_eff`` (charge ``-n omega_n a_eff``)."""
    q = -sphere_area(n) * a_eff
    return ChargeDensity((Term("mollified_point", (0.0,) * n,
                               {"sigma": sigma, "charge": q, "kernel": kernel}, n),), n, (4.0,))
