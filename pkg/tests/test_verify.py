import dataclasses
import json
import math

import numpy as np
import pytest
from scipy import stats

import distdrift.verify as V
from distdrift.coeffs import CoefficientSet, ExplicitPotential, build_sigma_table, uniform_grid
from distdrift.errors import InsufficientPaths, WeightDegenerate
from distdrift.htransform import build_h, constant, harmonic
from distdrift.pathfunc import PathFunctional
from distdrift.sim import SimConfig, simulate_transformed, simulate_weighted

ZERO = PathFunctional.constant(0.0)
ONE = PathFunctional.constant(1.0, growth_K=1.0)


def cfg(n_steps=128, n_paths=2000, seed=0, weighted=False, **kw):
    scheme = "girsanov-weighted" if weighted else "transformed-euler"
    return SimConfig(1.0, n_steps, n_paths, seed=seed, scheme=scheme, **kw)


@pytest.fixture(scope="module")
def two_case():
    c = CoefficientSet(lambda x: 2.0 + 0 * x, ExplicitPotential(lambda x: 0 * x), 0.01,
                       uniform_grid(-20, 20, 0.01))
    return c, build_h(build_sigma_table(c), c)


# ------------------------------------------------------------ martingale


def test_h_martingale_zero_functional(sin_case):
    c, _, m = sin_case
    e = simulate_transformed(cfg(seed=1), m, ZERO)
    rep = V.test_martingale_property(e, V.MartingaleTestSpec(harmonic()), m, c, ZERO)
    assert len(rep.entries) == 6 and rep.status == "PASS"
    assert all(abs(r.z) <= 3 for r in rep.entries)


def test_constant_function_statistic_exactly_zero(brox_case):
    c, _, m = brox_case
    e = simulate_transformed(cfg(n_paths=100, seed=2), m, ZERO)
    rep = V.test_martingale_property(e, V.MartingaleTestSpec(constant(2.5)), m, c, ZERO)
    assert all(r.statistic == 0.0 and r.z == 0.0 for r in rep.entries)


def test_martingale_battery_both_engines(zero_case):
    c, _, m = zero_case
    tr = simulate_transformed(cfg(seed=3, n_paths=4000), m, ONE)
    wt = simulate_weighted(cfg(seed=3, n_paths=4000, weighted=True), m, c, ONE)
    for e in (tr, wt):
        rep = V.martingale_battery(e, m, c, ONE)
        assert rep.status == "PASS", rep.table()
        assert len(rep.entries) == 18


def test_martingale_negative_control(zero_case):
    c, _, m = zero_case
    doubled = PathFunctional.constant(2.0)
    e = simulate_transformed(cfg(seed=4, n_paths=10_000), m, doubled)
    rep = V.martingale_battery(e, m, c, ONE)
    assert rep.status == "FAIL"
    assert max(abs(r.z) for r in rep.entries) > 3


def test_martingale_localization(sin_case):
    c, _, m = sin_case
    e = simulate_transformed(cfg(seed=5), m, ZERO)
    spec = V.MartingaleTestSpec(harmonic(), localize=0.5)
    assert V.test_martingale_property(e, spec, m, c, ZERO).status == "PASS"


def test_martingale_spec_validation(zero_case):
    c, _, m = zero_case
    with pytest.raises(ValueError):
        V.MartingaleTestSpec(harmonic(), time_pairs=[(0.5, 0.25)]).pairs(1.0)
    e = simulate_transformed(cfg(n_paths=1), m, ZERO)
    with pytest.raises(InsufficientPaths):
        V.test_martingale_property(e, V.MartingaleTestSpec(harmonic()), m, c, ZERO)
    e = simulate_transformed(cfg(n_paths=10), m, ZERO)
    with pytest.raises(ValueError):
        V.test_martingale_property(e, V.MartingaleTestSpec(harmonic(), time_pairs=[(0.1, 0.5)]),
                                   m, c, ZERO)


# ---------------------------------------------------- quadratic variation


def test_qv_brownian(zero_case):
    c, _, m = zero_case
    e = simulate_transformed(cfg(n_steps=2 ** 12, n_paths=100, seed=6), m, ZERO)
    rep = V.test_quadratic_variation(e, c)
    r = rep.entries[0]
    assert rep.status == "PASS" and r.statistic < 0.05
    assert r.details["levels"] == [10, 11, 12]


def test_qv_constant_sigma_two(two_case):
    c, m = two_case
    e = simulate_transformed(cfg(n_steps=2 ** 12, n_paths=100, seed=7), m, ZERO)
    rep = V.test_quadratic_variation(e, c)
    assert rep.entries[0].details["mean_qv_target"] == pytest.approx(4.0, rel=1e-12)
    rv = np.sum(np.diff(e.x_paths, axis=1) ** 2, axis=1)
    assert rv.mean() == pytest.approx(4.0, rel=0.01)
    assert rep.status == "PASS"


def test_qv_brox_equals_horizon(brox_case):
    c, _, m = brox_case
    e = simulate_transformed(cfg(n_steps=2 ** 12, n_paths=100, seed=8), m, ZERO)
    rv = np.sum(np.diff(e.x_paths, axis=1) ** 2, axis=1)
    assert rv.mean() == pytest.approx(1.0, rel=0.02)
    assert V.test_quadratic_variation(e, c).status == "PASS"


def test_qv_wrong_sigma_fails(zero_case, two_case):
    c2, m2 = two_case
    c1, _, _ = zero_case
    e = simulate_transformed(cfg(n_steps=2 ** 10, n_paths=50, seed=9), m2, ZERO)
    assert V.test_quadratic_variation(e, c1).status == "FAIL"


def test_qv_grid_requirements(zero_case):
    c, _, m = zero_case
    with pytest.raises(ValueError):
        V.test_quadratic_variation(simulate_transformed(cfg(n_steps=1000, n_paths=2), m, ZERO), c)
    with pytest.raises(ValueError):
        V.test_quadratic_variation(simulate_transformed(cfg(n_steps=256, n_paths=2), m, ZERO), c)


# ------------------------------------------------------------ KS helpers


def test_ks_2samp_unit_weights_matches_scipy():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=300), rng.normal(0.1, 1, size=400)
    d, p = V.weighted_ks_2samp(a, np.ones(300), b, np.ones(400))
    ref = stats.ks_2samp(a, b)
    assert d == ref.statistic and p == ref.pvalue


def test_ks_2samp_weighted_power():
    rng = np.random.default_rng(1)
    x = rng.normal(size=3000)
    w = np.exp(x - 0.5)                  # reweights N(0,1) to N(1,1)
    same = rng.normal(1.0, 1.0, 3000)
    shifted = rng.normal(1.5, 1.0, 3000)
    _, p_same = V.weighted_ks_2samp(x, w, same, np.ones(3000), n_boot=200)
    _, p_diff = V.weighted_ks_2samp(x, w, shifted, np.ones(3000), n_boot=200)
    assert p_same > 0.01 and p_diff < 0.01


def test_ks_1samp():
    rng = np.random.default_rng(2)
    x = rng.normal(size=4000)
    d, p = V.weighted_ks_1samp(x, np.ones(4000), stats.norm.cdf)
    assert (d, p) == pytest.approx(tuple(stats.kstest(x, stats.norm.cdf))[:2])
    w = np.exp(x - 0.5)
    assert V.weighted_ks_1samp(x, w, stats.norm(1, 1).cdf)[1] > 0.01
    assert V.weighted_ks_1samp(x, w, stats.norm(0, 1).cdf)[1] < 1e-6


# ---------------------------------------------------------- law equivalence


def test_law_equivalence_zero_functional(sin_case):
    c, _, m = sin_case
    e1 = simulate_transformed(cfg(seed=10), m, ZERO)
    e2 = simulate_weighted(cfg(seed=11, weighted=True), m, c, ZERO)
    rep = V.test_law_equivalence(e1, e2)
    assert rep.status == "PASS" and len(rep.entries) == 3


def test_law_equivalence_with_reference(zero_case):
    c, _, m = zero_case
    e1 = simulate_transformed(cfg(seed=12, n_paths=4000), m, ONE)
    e2 = simulate_weighted(cfg(seed=12, n_paths=4000, weighted=True), m, c, ONE)
    rep = V.test_law_equivalence(e1, e2, ["X_T"], reference={"X_T": stats.norm(1, 1).cdf})
    assert rep.status == "PASS" and len(rep.entries) == 3
    bad = V.test_law_equivalence(e1, e2, ["X_T"], reference={"X_T": stats.norm(0.8, 1).cdf})
    assert bad.status == "FAIL"


def test_law_equivalence_detects_degenerate_weights(zero_case):
    c, _, m = zero_case
    e1 = simulate_transformed(cfg(n_paths=500), m, ZERO)
    e2 = simulate_weighted(cfg(n_paths=500, weighted=True, ess_floor=0.0), m, c,
                           PathFunctional.constant(4.0))
    with pytest.raises(WeightDegenerate):
        V.test_law_equivalence(e1, e2)


# ----------------------------------------------------- pathwise uniqueness


@pytest.mark.parametrize("dists,lip,status", [
    ([1e-15, 2e-15, 1e-15], False, "PASS"),
    ([0.1, 0.07, 0.05], True, "PASS"),
    ([0.1, 0.09, 0.085], False, "INCONCLUSIVE"),
    ([0.1, 0.09, 0.085], True, "FAIL"),
    ([0.1, 0.03, 0.04], True, "FAIL"),
])
def test_classify_refinement(dists, lip, status):
    assert V.classify_refinement(dists, lip)[1] == status


def test_refinement_slope_half_for_geometric_decay():
    slope, status, _ = V.classify_refinement([2 ** (-0.5 * j) for j in range(4)], True)
    assert slope == pytest.approx(0.5, abs=1e-12) and status == "PASS"


def test_uniqueness_exact_for_brownian_motion(zero_case):
    _, _, m = zero_case
    rep = V.test_pathwise_uniqueness(SimConfig(1.0, 32, 20, seed=3), m, ZERO, levels=3)
    r = rep.entries[0]
    assert r.status == "PASS" and r.details["note"] == "exact"
    assert max(r.details["distances"]) <= 1e-12


# ----------------------------------------------------------------- weights


def test_weight_normalization(brox_case):
    c, _, m = brox_case
    g = PathFunctional("delay", "tanh", tau=0.25, scale=0.5, offset=0.5, growth_K=1.0)
    e = simulate_weighted(cfg(seed=13, weighted=True), m, c, g)
    assert V.test_weight_normalization(e).status == "PASS"
    z = simulate_weighted(cfg(seed=13, n_paths=50, weighted=True), m, c, ZERO)
    r = V.test_weight_normalization(z).entries[0]
    assert r.statistic == 1.0 and r.z == 0.0


def test_weight_normalization_negative_control(zero_case):
    c, _, m = zero_case
    e = simulate_weighted(cfg(seed=14, weighted=True), m, c, ONE)
    bad = dataclasses.replace(e, weights=e.weights * 1.2)
    assert V.test_weight_normalization(bad).status == "FAIL"


# ----------------------------------------------------------------- reports


def test_report_status_and_json():
    rep = V.VerificationReport("demo", metadata={"seed": 1})
    rep.entries.append(V.TestResult("a", 0.1, 0.1, 1.0, "PASS"))
    assert rep.status == "PASS"
    rep.entries.append(V.TestResult("b", 1.0, None, None, "INCONCLUSIVE", {"slope": math.inf}))
    assert rep.status == "INCONCLUSIVE"
    rep.entries.append(V.TestResult("c", 1.0, 0.0, np.float64(np.inf), "FAIL"))
    assert rep.status == "FAIL"
    data = json.loads(rep.to_json())
    assert data["status"] == "FAIL" and data["tests"][2]["z"] == "inf"
    assert {"name", "statistic", "stderr", "z", "pass"} <= set(data["tests"][0])
    assert "overall: FAIL" in rep.table()


def test_reports_reproducible(sin_case):
    c, _, m = sin_case
    e = simulate_transformed(cfg(n_paths=300, seed=15), m, ZERO)
    a = V.martingale_battery(e, m, c, ZERO).to_json()
    b = V.martingale_battery(e, m, c, ZERO).to_json()
    assert a == b
