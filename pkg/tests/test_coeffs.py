import numpy as np
import pytest

from distdrift.coeffs import (CoefficientSet, ExplicitPotential, PiecewiseLinearDrift, SmoothDrift,
                              brownian_environment, build_sigma_table, check_non_explosion,
                              uniform_grid)
from distdrift.errors import GridTooCoarse, NonPositiveSigma, NotConverged, OutOfRange

from conftest import unit
from oracles import adaptive_simpson, mollified_pl


def smooth(b, bp, eps=1e-3, grid=None, sigma=unit):
    grid = uniform_grid(-5, 5, 0.01) if grid is None else grid
    return CoefficientSet(sigma, SmoothDrift(b, bp), eps, grid)


def test_zero_drift_gives_zero_potential():
    t = build_sigma_table(smooth(lambda x: 0 * x, lambda x: 0 * x))
    assert np.all(t.values == 0.0)
    assert t.convergence_gap == 0.0


def test_sin_drift_potential(sin_case):
    _, t, _ = sin_case
    assert t(np.array(np.pi / 2)) == pytest.approx(1.0, abs=1e-8)
    assert np.max(np.abs(t.values - np.sin(t.grid))) < 1e-8
    assert t.values[t.grid == 0.0][0] == 0.0


def test_sin_drift_matches_adaptive_simpson_oracle(sin_case):
    c, t, _ = sin_case
    for x in (-3.7, -1.0, 0.5, 2.0, 4.25):
        ref = adaptive_simpson(lambda y: 2 * 0.5 * np.cos(y), 0.0, x)
        assert t(np.array(x)) == pytest.approx(ref, abs=1e-8)


def test_variable_sigma_against_oracle():
    sig = lambda x: 1.5 + 0.5 * np.tanh(x)  # noqa: E731
    c = smooth(lambda x: np.arctan(x), lambda x: 1 / (1 + x * x), eps=1e-4, sigma=sig)
    t = build_sigma_table(c)
    for x in (-2.0, 0.3, 3.1):
        ref = adaptive_simpson(lambda y: 2 / (1 + y * y) / sig(y) ** 2, 0.0, x)
        assert t(np.array(x)) == pytest.approx(ref, abs=1e-7)


def test_brox_potential_matches_convolution_oracle(brox_case):
    c, t, _ = brox_case
    env = c.drift
    eps = c.mollifier_scale
    b0 = mollified_pl(env.knots, env.values, 0.0, eps)
    for x in (-6.5, -2.003, -0.5, 1.0, 3.217, 7.9):
        j = int(np.argmin(np.abs(t.grid - x)))
        xj = t.grid[j]
        ref = 2 * (mollified_pl(env.knots, env.values, xj, eps) - b0)
        assert t.values[j] == pytest.approx(ref, abs=1e-6)


def test_explicit_potential_is_anchored():
    c = CoefficientSet(unit, ExplicitPotential(lambda x: x + 3.0), 0.1, uniform_grid(-2, 2, 0.1))
    t = build_sigma_table(c)
    assert t.values[c.zero_index] == 0.0
    assert np.allclose(t.values, t.grid, atol=1e-14)
    assert np.allclose(t.derivative, 1.0, atol=1e-10)


def test_mollification_linearity():
    a = build_sigma_table(smooth(np.sin, np.cos))
    b = build_sigma_table(smooth(lambda x: 2 * np.sin(x), lambda x: 2 * np.cos(x)))
    assert np.max(np.abs(b.values - 2 * a.values)) < 1e-12
    env = brownian_environment(3, 8.0, 0.01)
    env2 = PiecewiseLinearDrift(env.knots, 2 * env.values)
    g = uniform_grid(-4, 4, 0.002)
    opts = dict(quad_tol=1e-3, convergence_threshold=10.0)
    pa = build_sigma_table(CoefficientSet(unit, env, 0.05, g), **opts)
    pb = build_sigma_table(CoefficientSet(unit, env2, 0.05, g), **opts)
    assert np.max(np.abs(pb.values - 2 * pa.values)) < 1e-12


def test_mollification_error_decays_at_least_linearly():
    # b' has a kink, so the mollified potential differs from the exact one at O(eps^2).
    b = lambda x: np.abs(x - 0.4) * x  # noqa: E731
    bp = lambda x: np.sign(x - 0.4) * x + np.abs(x - 0.4)  # noqa: E731
    exact = lambda x: 2 * (b(x) - b(0.0))  # noqa: E731
    errs = []
    for eps in (0.2, 0.1):
        t = build_sigma_table(smooth(b, bp, eps=eps, grid=uniform_grid(-3, 3, 0.005)),
                              quad_tol=1e-4, convergence_threshold=1.0)
        errs.append(np.max(np.abs(t.values - exact(t.grid))))
    assert np.log2(errs[0] / errs[1]) >= 1.0


def test_nonpositive_sigma_rejected():
    with pytest.raises(NonPositiveSigma):
        smooth(np.sin, np.cos, sigma=lambda x: x)


def test_grid_too_coarse():
    c = smooth(lambda x: np.sin(20 * x), lambda x: 20 * np.cos(20 * x), eps=0.01,
               grid=uniform_grid(-5, 5, 0.1))
    with pytest.raises(GridTooCoarse):
        build_sigma_table(c)


def test_not_converged_for_rough_environment():
    env = brownian_environment(1, 10.0, 0.01)
    c = CoefficientSet(unit, env, 0.05, uniform_grid(-5, 5, 0.001))
    with pytest.raises(NotConverged):
        build_sigma_table(c, quad_tol=1.0)


def test_piecewise_linear_needs_padding():
    env = brownian_environment(1, 5.0, 0.01)
    c = CoefficientSet(unit, env, 0.1, uniform_grid(-4.9, 4.9, 0.01))
    with pytest.raises(OutOfRange):
        build_sigma_table(c)


@pytest.mark.parametrize("kwargs", [
    dict(eval_grid=np.linspace(0.1, 1, 10)),              # no zero node
    dict(eval_grid=np.array([-1.0, 0.0, 0.5, 2.0])),      # non-uniform
    dict(mollifier_scale=0.0),
    dict(mollifier_scale=5.0),
])
def test_coefficient_set_invariants(kwargs):
    base = dict(sigma=unit, drift=ExplicitPotential(np.sin), mollifier_scale=0.01,
                eval_grid=uniform_grid(-2, 2, 0.1))
    base.update(kwargs)
    with pytest.raises(ValueError):
        CoefficientSet(**base)


def test_uniform_grid_contains_zero_exactly():
    g = uniform_grid(-1.03, 2.0, 0.01)
    assert np.any(g == 0.0)
    assert g[0] <= -1.03 and g[-1] >= 2.0


def test_brownian_environment_deterministic():
    a, b = brownian_environment(11, 3.0, 0.01), brownian_environment(11, 3.0, 0.01)
    assert np.array_equal(a.values, b.values)
    assert a(np.array(0.0)) == 0.0
    assert not np.array_equal(a.values, brownian_environment(12, 3.0, 0.01).values)


def test_piecewise_drift_from_csv(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("x,b\n-1,0\n0,1\n2,3\n")
    d = PiecewiseLinearDrift.from_csv(p)
    assert np.allclose(d.slopes, [1.0, 1.0])
    assert d(np.array(1.0)) == 2.0


def test_non_explosion_zero_potential(zero_case):
    _, t, _ = zero_case
    r = check_non_explosion(t)
    assert r.flag == "PASS-heuristic"
    assert np.allclose(r.right_integrals, r.windows)
    assert np.allclose(r.left_integrals, r.windows)


def test_non_explosion_sin(sin_case):
    _, t, _ = sin_case
    r = check_non_explosion(t)
    assert r.flag == "PASS-heuristic"
    for w, i in zip(r.windows, r.right_integrals):
        assert i >= np.exp(-1) * w


def test_non_explosion_linear_potential_inconclusive():
    c = CoefficientSet(unit, ExplicitPotential(lambda x: x), 0.01, uniform_grid(-10, 10, 0.01))
    r = check_non_explosion(build_sigma_table(c))
    assert r.flag == "INCONCLUSIVE"
    for w, i in zip(r.windows, r.right_integrals):
        assert i == pytest.approx(1 - np.exp(-w), abs=1e-5)
