"""Parameter grids shared by the test modules."""
import numpy as np

from cudvine.copulae import BivariateCopulaSpec, Family

S = BivariateCopulaSpec

FAMILY_GRID = [
    S(Family.GAUSSIAN, (-0.9,)), S(Family.GAUSSIAN, (-0.3,)), S(Family.GAUSSIAN, (0.5,)),
    S(Family.GAUSSIAN, (0.95,)),
    S(Family.STUDENT_T, (0.7, 3.0)), S(Family.STUDENT_T, (-0.4, 10.0)), S(Family.STUDENT_T, (0.2, 50.0)),
    S(Family.CLAYTON, (0.3,)), S(Family.CLAYTON, (2.0,)), S(Family.CLAYTON, (10.0,)),
    S(Family.GUMBEL, (1.1,)), S(Family.GUMBEL, (2.0,)), S(Family.GUMBEL, (6.0,)),
    S(Family.FRANK, (-8.0,)), S(Family.FRANK, (0.5,)), S(Family.FRANK, (5.0,)), S(Family.FRANK, (20.0,)),
    S(Family.JOE, (1.2,)), S(Family.JOE, (2.5,)), S(Family.JOE, (8.0,)),
]

# Moderate dependence (|tau| <= 0.5): densities smooth enough for fixed-order quadrature.
MODERATE_GRID = [
    S(Family.INDEPENDENCE, ()), S(Family.GAUSSIAN, (-0.3,)), S(Family.GAUSSIAN, (0.5,)),
    S(Family.STUDENT_T, (0.5, 8.0)), S(Family.STUDENT_T, (-0.2, 20.0)),
    S(Family.CLAYTON, (0.5,)), S(Family.CLAYTON, (1.5,)), S(Family.GUMBEL, (1.25,)),
    S(Family.GUMBEL, (1.8,)), S(Family.FRANK, (-3.0,)), S(Family.FRANK, (4.0,)),
    S(Family.JOE, (1.3,)), S(Family.JOE, (2.0,)),
]

INTERIOR = np.array([0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95])


def spec_id(spec):
    return f"{spec.family.value}{list(spec.params)}"


def interior_grid():
    u, v = np.meshgrid(INTERIOR, INTERIOR)
    return u.ravel(), v.ravel()
