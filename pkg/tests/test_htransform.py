import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distdrift.coeffs import CoefficientSet, ExplicitPotential, build_sigma_table, uniform_grid
from distdrift.errors import ConsistencyError, NonMonotone, OutOfRange
from distdrift.htransform import (DomainFunction, apply_L, build_h, compact_bump, constant,
                                  harmonic, square_in_domain, transfer_operator)

from conftest import unit
from oracles import adaptive_simpson, central_derivative6


def identity_phi():
    """phi(x) = x, so f' = e^{-Sigma} x."""
    return DomainFunction(lambda x: x, lambda x: 1.0, "phi=x")


def test_zero_potential_gives_identity(zero_case):
    _, _, m = zero_case
    assert np.allclose(m.h_values, m.grid, atol=1e-12)
    assert np.all(m.hprime_values == 1.0)
    assert np.allclose(m.sigma0_cache, 1.0)
    y = np.linspace(-11, 13, 101)
    assert np.allclose(m.sigma0(y), 1.0)


def test_h_of_one_matches_oracle(sin_case):
    _, _, m = sin_case
    ref = adaptive_simpson(lambda y: np.exp(-np.sin(y)), 0.0, 1.0)
    assert float(m.h(np.array(1.0))) == pytest.approx(ref, abs=1e-8)
    assert float(m.h(np.array(0.0))) == 0.0


def test_h_strictly_increasing_and_roundtrip(sin_case, brox_case):
    for _, _, m in (sin_case, brox_case):
        assert np.all(np.diff(m.h_values) > 0)
        assert np.max(np.abs(m.inverse(m.h_values) - m.grid)) <= 1e-8


@settings(max_examples=60, deadline=None)
@given(st.floats(-7.99, 7.99))
def test_roundtrip_off_grid(brox_case, x):
    _, _, m = brox_case
    assert abs(float(m.inverse(m.h(np.array(x)))) - x) <= 1e-8


def test_brox_sigma0_formula(brox_case):
    c, t, m = brox_case
    x = np.linspace(-7.5, 7.5, 41)
    assert np.allclose(m.sigma0(m.h(x)), np.exp(-t(x)), rtol=1e-9)


def test_inverse_rejects_outside_image(sin_case):
    _, _, m = sin_case
    lo, hi = m.image_range
    with pytest.raises(OutOfRange):
        m.inverse(np.array([hi + 1e-6]))
    with pytest.raises(OutOfRange):
        m.h(np.array(11.0))


def test_nonmonotone_on_overflowing_potential():
    c = CoefficientSet(unit, ExplicitPotential(lambda x: 900.0 * x), 0.01, uniform_grid(-2, 2, 0.01))
    with pytest.raises(NonMonotone):
        build_h(build_sigma_table(c), c)


def test_h_is_harmonic(sin_case):
    c, t, m = sin_case
    assert np.max(np.abs(apply_L(harmonic(), m, c, m.grid))) <= 1e-9


def test_h_is_harmonic_classically(sin_case):
    # Classical L h = sigma^2/2 h'' + b'_eps h' with h'' from a sixth-order stencil on
    # the tabulated h' and b'_eps = Sigma'/2 from the table; independent of phi.
    c, t, m = sin_case
    dx = t.grid[1] - t.grid[0]
    hpp = central_derivative6(m.hprime_values, dx)
    Lh = 0.5 * hpp + 0.5 * t.derivative[3:-3] * m.hprime_values[3:-3]
    assert np.max(np.abs(Lh)) <= 1e-9


def test_L_of_h_squared(sin_case, brox_case):
    for c, _, m in (sin_case, brox_case):
        x = m.grid[::7]
        f2 = square_in_domain(harmonic(), 0.0, m)
        assert np.max(np.abs(apply_L(f2, m, c, x) - c.sigma(x) ** 2 * m.hprime(x) ** 2)) <= 1e-9


def test_square_identity_for_general_f(sin_case):
    c, _, m = sin_case
    f = compact_bump(0.5, 2.0)
    f2 = square_in_domain(f, 0.3, m)
    x = np.linspace(-4, 4, 57)
    lhs = apply_L(f2, m, c, x)
    rhs = c.sigma(x) ** 2 * f.fprime(m, x) ** 2 + 2 * f.values(m, x, 0.3) * apply_L(f, m, c, x)
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_constant_function(sin_case):
    c, _, m = sin_case
    x = np.linspace(-3, 3, 11)
    f = constant(2.0)
    assert np.all(apply_L(f, m, c, x) == 0)
    assert np.all(apply_L(square_in_domain(f, 2.0, m), m, c, x) == 0)


def test_classical_cases_with_identity_map(zero_case):
    c, _, m = zero_case
    x = np.linspace(-5, 5, 21)
    f = identity_phi()                       # f = x^2 / 2
    assert np.allclose(apply_L(f, m, c, x), 0.5)
    assert np.allclose(f.values(m, x), x ** 2 / 2, atol=1e-10)
    x2 = square_in_domain(harmonic(), 0.0, m)  # f = x^2
    assert np.allclose(apply_L(x2, m, c, x), 1.0)
    y = np.linspace(-4, 4, 9)
    assert np.allclose(transfer_operator(f, m, y), 0.5, rtol=1e-6)


def test_apply_L_out_of_range(sin_case):
    c, _, m = sin_case
    with pytest.raises(OutOfRange):
        apply_L(harmonic(), m, c, np.array([10.5]))


def test_transfer_operator_routes_agree(sin_case):
    c, _, m = sin_case
    rng = np.random.default_rng(0)
    lo, hi = m.image_range
    y = rng.uniform(lo + 0.5, hi - 0.5, 100)
    for f in (identity_phi(), compact_bump(), harmonic()):
        tr = transfer_operator(f, m, y)
        direct = apply_L(f, m, c, m.inverse(y))
        assert np.all(np.abs(tr - direct) <= 1e-6 * (1 + np.abs(direct)))
        transfer_operator(f, m, y, s=c)  # internal cross-check must not raise


def test_transfer_operator_detects_inconsistent_coefficients(sin_case):
    c, _, m = sin_case
    wrong = CoefficientSet(lambda x: 2.0 + 0 * x, c.drift, c.mollifier_scale, c.eval_grid)
    with pytest.raises(ConsistencyError):
        transfer_operator(identity_phi(), m, np.array([0.3]), s=wrong)


def test_transfer_operator_range(sin_case):
    _, _, m = sin_case
    with pytest.raises(OutOfRange):
        transfer_operator(harmonic(), m, np.array([m.image_range[1]]))


def test_csv_export(sin_case, tmp_path):
    _, t, m = sin_case
    p = tmp_path / "h.csv"
    m.to_csv(p)
    data = np.loadtxt(p, delimiter=",", skiprows=1)
    assert data.shape == (m.grid.size, 5)
    assert np.array_equal(data[:, 2], m.h_values)
    assert p.read_text().splitlines()[0] == "x,Sigma,h,hprime,sigma0_of_h"
