import numpy as np
import pytest

from distdrift.coeffs import (CoefficientSet, ExplicitPotential, SmoothDrift, brownian_environment,
                              build_sigma_table, uniform_grid)
from distdrift.htransform import build_h


def unit(x):
    return np.ones_like(np.asarray(x, dtype=float))


@pytest.fixture(scope="session")
def zero_case():
    c = CoefficientSet(unit, ExplicitPotential(lambda x: 0.0 * x), 1e-3, uniform_grid(-12, 14, 0.01))
    t = build_sigma_table(c)
    return c, t, build_h(t, c)


@pytest.fixture(scope="session")
def sin_case():
    """sigma = 1, b = sin/2, so Sigma = sin up to O(eps^2)."""
    c = CoefficientSet(unit, SmoothDrift(lambda x: 0.5 * np.sin(x), lambda x: 0.5 * np.cos(x)),
                       1e-4, uniform_grid(-10, 10, 0.01))
    t = build_sigma_table(c)
    return c, t, build_h(t, c)


@pytest.fixture(scope="session")
def brox_case():
    env = brownian_environment(7, 12.0, 0.01, scale=-0.5)
    c = CoefficientSet(unit, env, 0.02, uniform_grid(-8, 8, 0.001))
    t = build_sigma_table(c, quad_tol=1e-5, convergence_threshold=0.25)
    return c, t, build_h(t, c)
