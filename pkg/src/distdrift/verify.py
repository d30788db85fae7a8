"""Statistical checks on simulated ensembles.

Every check returns a :class:`VerificationReport` whose entries carry a statistic,
a standard error (where meaningful), a z-score or p-value, and a status in
{PASS, FAIL, INCONCLUSIVE}.  All randomness (bootstrap resampling) is seeded, so
re-running a check on the same ensemble reproduces the report exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .coeffs import CoefficientSet
from .errors import InsufficientPaths, WeightDegenerate
from .htransform import DomainFunction, HarmonicMap, apply_L, compact_bump, harmonic, square_in_domain
from .pathfunc import PathFunctional, gamma_along
from .sim import PathEnsemble, SimConfig, refinement_levels

Z_THRESHOLD = 3.0
P_FLOOR = 0.01


@dataclass
class TestResult:
    name: str
    statistic: float
    stderr: Optional[float]
    z: Optional[float]
    status: str
    details: dict = field(default_factory=dict)

    # keep pytest from collecting this class
    __test__ = False

    @property
    def passed(self) -> bool:
        return self.status == "PASS"

    def to_dict(self) -> dict:
        return {"name": self.name, "statistic": self.statistic, "stderr": self.stderr,
                "z": self.z, "pass": self.passed, "status": self.status, **self.details}


@dataclass
class VerificationReport:
    title: str
    entries: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        states = {e.status for e in self.entries}
        if "FAIL" in states:
            return "FAIL"
        if "INCONCLUSIVE" in states:
            return "INCONCLUSIVE"
        return "PASS"

    @property
    def passed(self) -> bool:
        return self.status == "PASS"

    def extend(self, other: "VerificationReport") -> "VerificationReport":
        self.entries.extend(other.entries)
        return self

    def to_dict(self) -> dict:
        return {"title": self.title, "status": self.status, "metadata": self.metadata,
                "tests": [e.to_dict() for e in self.entries]}

    def to_json(self) -> str:
        return json.dumps(_finite(self.to_dict()), indent=2, sort_keys=True,
                          default=_json_default, allow_nan=False)

    def table(self) -> str:
        head = f"{'test':<66} {'statistic':>12} {'stderr':>10} {'z/p':>9}  status"
        rows = [self.title, head, "-" * len(head)]
        for e in self.entries:
            zp = e.z if e.z is not None else e.details.get("p_value")
            rows.append(f"{e.name:<66} {_fmt(e.statistic):>12} {_fmt(e.stderr):>10} "
                        f"{_fmt(zp):>9}  {e.status}")
        rows.append(f"overall: {self.status}")
        return "\n".join(rows)


def _fmt(v) -> str:
    if v is None:
        return "-"
    return f"{v:.4g}"


def _finite(o):
    """Replace non-finite floats by strings so the output is strict JSON."""
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    if isinstance(o, (float, np.floating)) and not np.isfinite(o):
        return str(float(o))
    return o


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _meta(*ensembles: PathEnsemble) -> dict:
    return {"ensembles": [{"scheme": e.scheme, "seed": e.seed, "n_paths": e.n_paths,
                           "n_steps": e.n_steps} for e in ensembles]}


# ----------------------------------------------------------------- martingale


def _probe_one() -> PathFunctional:
    return PathFunctional.constant(1.0, name="1")


DEFAULT_PROBES = (
    _probe_one(),
    PathFunctional("instantaneous", "tanh", name="tanh(X_s)"),
    PathFunctional("running-max", "tanh", name="tanh(max X)"),
)


@dataclass
class MartingaleTestSpec:
    """Moment conditions E[(M^f_t - M^f_s) g(X^s)] = 0 for one f in D_L.

    ``f0`` is f(0) for functions recovered by quadrature; ``probes`` are bounded
    functionals evaluated on the path stopped at s; ``localize`` stops paths on
    leaving [-R, R].
    """

    test_function: DomainFunction
    f0: float = 0.0
    probes: Sequence[PathFunctional] = DEFAULT_PROBES
    time_pairs: Optional[Sequence[tuple]] = None
    localize: Optional[float] = None
    threshold: float = Z_THRESHOLD

    def pairs(self, T: float) -> list:
        if self.time_pairs is None:
            return [(T / 4, T / 2), (T / 2, T)]
        for s, t in self.time_pairs:
            if not 0 <= s < t <= T:
                raise ValueError(f"time pair ({s}, {t}) not ordered within [0, {T}]")
        return list(self.time_pairs)


def default_battery(m: HarmonicMap) -> list:
    """f in {h, h^2, bump-generated f} with the default probes and time pairs."""
    h = harmonic()
    return [MartingaleTestSpec(h), MartingaleTestSpec(square_in_domain(h, 0.0, m)),
            MartingaleTestSpec(compact_bump())]


def _weighted_mean(z: np.ndarray, w: np.ndarray) -> tuple:
    """Self-normalized weighted mean and its delta-method standard error."""
    sw = w.sum()
    est = float(np.sum(w * z) / sw)
    se = float(np.sqrt(np.sum((w * (z - est)) ** 2)) / sw)
    return est, se


def _node(times: np.ndarray, t: float) -> int:
    k = int(round(t / (times[1] - times[0])))
    if abs(times[k] - t) > 1e-9 * max(1.0, t):
        raise ValueError(f"time {t} is not a grid node")
    return k


def test_martingale_property(e: PathEnsemble, spec: MartingaleTestSpec, m: HarmonicMap,
                             s: CoefficientSet, g: PathFunctional) -> VerificationReport:
    """z-scores of E[(M^f_t - M^f_s) g(X^s)] with left-point Riemann sums for the
    dt-integrals.  Weighted ensembles use self-normalized weights."""
    x = e.x_paths
    times = e.times
    dt = float(times[1] - times[0])
    f = spec.test_function
    fx = f.values(m, x, spec.f0)
    drift = apply_L(f, m, s, x)
    if not g.is_zero:
        drift = drift + f.fprime(m, x) * gamma_along(g, times, x)
    if spec.localize is not None:
        outside = np.abs(x) > spec.localize
        exit_k = np.where(outside.any(axis=1), outside.argmax(axis=1), x.shape[1] - 1)
    else:
        exit_k = np.full(x.shape[0], x.shape[1] - 1)
    rows = np.arange(x.shape[0])
    cum = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(drift[:, :-1], axis=1) * dt], axis=1)
    w = e.weights
    if e.n_paths < 2:
        raise InsufficientPaths("need at least two paths")
    rep = VerificationReport(f"martingale {f.description}", metadata=_meta(e))
    for s_t, t_t in spec.pairs(e.T):
        ks, kt = _node(times, s_t), _node(times, t_t)
        ks_, kt_ = np.minimum(ks, exit_k), np.minimum(kt, exit_k)
        inc = (fx[rows, kt_] - fx[rows, ks_]) - (cum[rows, kt_] - cum[rows, ks_])
        for probe in spec.probes:
            gv = gamma_along(probe, times[: ks + 1], x[:, : ks + 1])[:, ks]
            z_i = inc * gv
            est, se = _weighted_mean(z_i, w)
            scale = float(np.sum(w * np.abs(z_i)) / w.sum())
            if se > 10 * scale and se > 0:
                raise InsufficientPaths(f"stderr {se:g} exceeds ten times the statistic scale {scale:g}")
            if se == 0:
                z = 0.0 if est == 0 else float("inf")
            else:
                z = est / se
            status = "PASS" if abs(z) <= spec.threshold else "FAIL"
            rep.entries.append(TestResult(
                f"M[{f.description}] ({s_t:g},{t_t:g}] x {probe.label}", est, se, z, status))
    return rep


def martingale_battery(e: PathEnsemble, m: HarmonicMap, s: CoefficientSet, g: PathFunctional,
                       specs: Optional[list] = None) -> VerificationReport:
    rep = VerificationReport("martingale battery", metadata=_meta(e))
    for spec in specs if specs is not None else default_battery(m):
        rep.extend(test_martingale_property(e, spec, m, s, g))
    return rep


# --------------------------------------------------------- quadratic variation


def test_quadratic_variation(e: PathEnsemble, s: CoefficientSet, min_level: int = 10,
                             tolerance: float = 0.05) -> VerificationReport:
    """Realized QV on dyadic subgrids against int_0^T sigma^2(X) ds (trapezoid on
    the full grid).  PASS iff the finest mean relative error is below
    ``tolerance`` and the errors decrease from level to level."""
    n = e.n_steps
    top = int(round(np.log2(n)))
    if 2 ** top != n:
        raise ValueError("quadratic-variation check needs a power-of-two step count")
    if top < min_level:
        raise ValueError(f"need at least 2^{min_level} steps")
    x = e.x_paths
    dt = e.T / n
    sig2 = s.sigma(x) ** 2
    target = dt * (sig2.sum(axis=1) - 0.5 * (sig2[:, 0] + sig2[:, -1]))
    levels = list(range(min_level, top + 1))
    errors = []
    for lev in levels:
        sub = x[:, :: n // 2 ** lev]
        rv = np.sum(np.diff(sub, axis=1) ** 2, axis=1)
        errors.append(float(np.mean(np.abs(rv - target) / target)))
    decreasing = all(b < a for a, b in zip(errors, errors[1:]))
    ok = errors[-1] < tolerance and decreasing
    rep = VerificationReport("quadratic variation", metadata=_meta(e))
    rep.entries.append(TestResult(
        f"QV rel. error at 2^{top}", errors[-1], None, None, "PASS" if ok else "FAIL",
        {"levels": levels, "errors": errors, "decreasing": decreasing,
         "mean_qv_target": float(target.mean())}))
    return rep


# ---------------------------------------------------------------- law tests


OBSERVABLES: dict[str, Callable] = {
    "X_T": lambda e: e.x_paths[:, -1],
    "sup_X": lambda e: e.x_paths.max(axis=1),
    "int_X": lambda e: (e.T / e.n_steps) * (e.x_paths.sum(axis=1)
                                            - 0.5 * (e.x_paths[:, 0] + e.x_paths[:, -1])),
}


def _ecdf_on(x: np.ndarray, w: np.ndarray, grid: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cw = np.concatenate([[0.0], np.cumsum(w[order])])
    return cw[np.searchsorted(xs, grid, side="right")] / cw[-1]


def weighted_ks_2samp(x1, w1, x2, w2, n_boot: int = 300, seed: int = 0) -> tuple:
    """Two-sample KS distance between weighted empirical laws with a bootstrap p-value.

    The null distribution comes from a centered bootstrap: (x, w) pairs are
    resampled within each sample and the statistic
    sup |(F1* - F2*) - (F1 - F2)| is recorded.  With unit weights on both sides the
    exact/asymptotic p-value of :func:`scipy.stats.ks_2samp` is returned instead.
    """
    x1, x2 = np.asarray(x1, float), np.asarray(x2, float)
    w1, w2 = np.asarray(w1, float), np.asarray(w2, float)
    if np.all(w1 == 1) and np.all(w2 == 1):
        r = stats.ks_2samp(x1, x2)
        return float(r.statistic), float(r.pvalue)
    grid = np.sort(np.concatenate([x1, x2]))
    diff = _ecdf_on(x1, w1, grid) - _ecdf_on(x2, w2, grid)
    d = float(np.max(np.abs(diff)))
    rng = np.random.default_rng(seed)
    exceed = 0
    for _ in range(n_boot):
        i1 = rng.integers(0, x1.size, x1.size)
        i2 = rng.integers(0, x2.size, x2.size)
        db = _ecdf_on(x1[i1], w1[i1], grid) - _ecdf_on(x2[i2], w2[i2], grid)
        exceed += np.max(np.abs(db - diff)) >= d
    return d, (exceed + 1) / (n_boot + 1)


def weighted_ks_1samp(x, w, cdf: Callable) -> tuple:
    """KS distance of a weighted sample from a reference CDF; the asymptotic
    Kolmogorov p-value uses the effective sample size (sum w)^2 / sum w^2."""
    x, w = np.asarray(x, float), np.asarray(w, float)
    if np.all(w == 1):
        r = stats.kstest(x, cdf)
        return float(r.statistic), float(r.pvalue)
    order = np.argsort(x, kind="stable")
    xs, ws = x[order], w[order] / w.sum()
    upper = np.cumsum(ws)
    lower = upper - ws
    fr = cdf(xs)
    d = float(max(np.max(upper - fr), np.max(fr - lower)))
    n_eff = w.sum() ** 2 / np.sum(w * w)
    return d, float(stats.kstwobign.sf(d * np.sqrt(n_eff)))


def test_law_equivalence(e1: PathEnsemble, e2: PathEnsemble,
                         observables: Sequence[str] = ("X_T", "sup_X", "int_X"),
                         reference: Optional[dict] = None, n_boot: int = 300, seed: int = 0,
                         ess_floor: float = 0.1) -> VerificationReport:
    """Weighted two-sample KS on path observables; PASS iff p > 0.01.

    ``reference`` optionally maps observable names to closed-form CDFs; each
    ensemble is then also tested against that law (one-sample KS).
    """
    for e in (e1, e2):
        if e.ess < ess_floor * e.n_paths:
            raise WeightDegenerate(f"ensemble {e.scheme} has effective size {e.ess:.1f}")
    rep = VerificationReport("law equivalence", metadata=_meta(e1, e2))
    for i, name in enumerate(observables):
        obs = OBSERVABLES[name]
        a, b = obs(e1), obs(e2)
        d, p = weighted_ks_2samp(a, e1.weights, b, e2.weights, n_boot, seed + i)
        rep.entries.append(TestResult(f"KS {name}: {e1.scheme} vs {e2.scheme}", d, None, None,
                                      "PASS" if p > P_FLOOR else "FAIL", {"p_value": p}))
        if reference and name in reference:
            for e, v in ((e1, a), (e2, b)):
                d1, p1 = weighted_ks_1samp(v, e.weights, reference[name])
                rep.entries.append(TestResult(f"KS {name}: {e.scheme} vs reference", d1, None, None,
                                              "PASS" if p1 > P_FLOOR else "FAIL", {"p_value": p1}))
    return rep


# ------------------------------------------------------- pathwise uniqueness


def classify_refinement(dists, lipschitz_declared: bool, min_slope: float = 0.4,
                        exact_tol: float = 1e-12) -> tuple:
    """(slope, status, note) for successive refinement distances d_0, d_1, ..."""
    d = np.asarray(dists, dtype=float)
    if np.all(d <= exact_tol):
        return float("inf"), "PASS", "exact"
    lev = np.arange(d.size)
    slope = float(-np.polyfit(lev, np.log2(np.maximum(d, 1e-300)), 1)[0])
    if slope >= min_slope and bool(np.all(np.diff(d) < 0)):
        return slope, "PASS", ""
    if not lipschitz_declared:
        return slope, "INCONCLUSIVE", "functional not declared Lipschitz"
    return slope, "FAIL", ""


def test_pathwise_uniqueness(cfg: SimConfig, m: HarmonicMap, g: PathFunctional, levels: int = 4,
                             min_slope: float = 0.4, exact_tol: float = 1e-12) -> VerificationReport:
    """Shared-noise refinement: ``cfg.n_paths`` Brownian streams are simulated at
    n, 2n, ..., 2^(levels-1) n steps with bridge-refined increments.

    d_j is the stream average of the sup over the coarse nodes of
    |X^(j)(t) - X^(j+1)(t)|.  PASS iff the least-squares log2 slope of d_j is at
    least ``min_slope`` and d_j decreases, or all d_j vanish to ``exact_tol``.  A
    functional without a declared Lipschitz constant gets INCONCLUSIVE instead of
    FAIL.
    """
    if levels < 3:
        raise ValueError("need at least three resolutions")
    ens = refinement_levels(cfg, m, g, levels)
    dists = []
    for c, f in zip(ens, ens[1:]):
        dists.append(float(np.mean(np.max(np.abs(c.x_paths - f.x_paths[:, ::2]), axis=1))))
    slope, status, note = classify_refinement(dists, g.lipschitz_K is not None, min_slope, exact_tol)
    rep = VerificationReport("pathwise uniqueness", metadata={
        "seed": cfg.seed, "n_streams": cfg.n_paths, "base_steps": cfg.n_steps})
    rep.entries.append(TestResult(
        f"strong refinement slope over {ens[0].n_steps}..{ens[-1].n_steps} steps", slope, None, None, status,
        {"distances": dists, "steps": [e.n_steps for e in ens], "note": note}))
    return rep


# ------------------------------------------------------------- weights


def test_weight_normalization(e: PathEnsemble, n_boot: int = 1000, seed: int = 0,
                              threshold: float = Z_THRESHOLD) -> VerificationReport:
    """sum(w)/N against 1 with a bootstrap standard error."""
    w = e.weights
    mean = float(w.mean())
    rng = np.random.default_rng(seed)
    boot = np.array([w[rng.integers(0, w.size, w.size)].mean() for _ in range(n_boot)])
    se = float(boot.std(ddof=1))
    if se == 0:
        z = 0.0 if mean == 1.0 else float("inf")
    else:
        z = (mean - 1.0) / se
    rep = VerificationReport("weight normalization", metadata=_meta(e))
    rep.entries.append(TestResult("mean weight = 1", mean, se, z,
                                  "PASS" if abs(z) <= threshold else "FAIL",
                                  {"ess": e.ess}))
    return rep


for _fn in (test_martingale_property, test_quadratic_variation, test_law_equivalence,
            test_pathwise_uniqueness, test_weight_normalization):
    _fn.__test__ = False
