"""Monte Carlo engines for the path-dependent equation with distributional drift.

The original equation has a distributional drift and cannot be discretized
directly.  Both engines work on Y = h(X), whose coefficients are continuous:

* ``simulate_transformed``: Euler-Maruyama on
  dY = sigma_0(Y) dW + h'(X) Gamma(t, X^t) dt with X = h^{-1}(Y);
* ``simulate_weighted``: Euler on the driftless dY = sigma_0(Y) dW, carrying the
  Girsanov weight V_T = exp(sum Gamma~ dW - 1/2 sum Gamma~^2 dt).

Gaussian increments come from counter-based Philox streams keyed by
(engine, path id, refinement level), so ensembles do not depend on chunking or
thread count.
"""
from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .coeffs import CoefficientSet
from .errors import GridExitLimit, OutOfRange, UnboundedSigma0, WeightDegenerate
from .htransform import HarmonicMap
from .pathfunc import PathFunctional

SCHEMES = ("transformed-euler", "girsanov-weighted")
ENGINE_TAG = {"transformed-euler": 0, "girsanov-weighted": 1}
BINARY_MAGIC = b"DDRIFT01"
BINARY_VERSION = 1
_HEADER = struct.Struct("<8sHIH")


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.  ``grid_exit_fraction`` caps the share of paths that may
    touch the edge of the tabulated image of h; ``ess_floor`` is the minimal
    N_eff / N accepted from the weighted engine; ``sigma0_cap`` is the largest
    table sup of sigma_0 treated as bounded."""

    T: float
    n_steps: int
    n_paths: int
    x0: float = 0.0
    seed: int = 0
    scheme: str = "transformed-euler"
    grid_exit_fraction: float = 0.01
    ess_floor: float = 0.1
    sigma0_cap: float = 1e3

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.n_steps < 2:
            raise ValueError("n_steps must be at least 2")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class PathEnsemble:
    times: np.ndarray
    x_paths: np.ndarray
    y_paths: np.ndarray
    w_increments: np.ndarray
    weights: np.ndarray
    log_weights: np.ndarray
    path_ids: np.ndarray
    seed: int
    scheme: str
    grid_exits: int = 0
    config: Optional[SimConfig] = field(default=None, compare=False)

    @property
    def n_paths(self) -> int:
        return self.x_paths.shape[0]

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def ess(self) -> float:
        w = self.weights
        return float(w.sum() ** 2 / np.sum(w * w))

    def to_csv(self, path) -> None:
        """Long format: path_id, t, X, Y, weight (one row per path and node)."""
        n, m = self.x_paths.shape
        data = np.column_stack([
            np.repeat(self.path_ids, m), np.tile(self.times, n),
            self.x_paths.ravel(), self.y_paths.ravel(), np.repeat(self.weights, m)])
        np.savetxt(path, data, delimiter=",", header="path_id,t,X,Y,weight", comments="",
                   fmt=["%d", "%.17g", "%.17g", "%.17g", "%.17g"])

    def to_binary(self, path) -> None:
        """16-byte header (magic, version u16, N u32, n_steps u16), then little-endian
        float64 blocks: times, X (row-major), Y (row-major), weights."""
        if self.n_steps > 0xFFFF:
            raise ValueError("binary format stores n_steps as u16")
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, self.n_paths, self.n_steps))
            for arr in (self.times, self.x_paths, self.y_paths, self.weights):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_binary(path) -> dict:
    """Read an ensemble dump back into arrays (times, x_paths, y_paths, weights)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, n, steps = _HEADER.unpack_from(raw)
    if magic != BINARY_MAGIC or version != BINARY_VERSION:
        raise ValueError("not an ensemble dump")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    m = steps + 1
    sizes = [m, n * m, n * m, n]
    if data.size != sum(sizes):
        raise ValueError("truncated ensemble dump")
    parts = np.split(data, np.cumsum(sizes)[:-1])
    return {"times": parts[0], "x_paths": parts[1].reshape(n, m),
            "y_paths": parts[2].reshape(n, m), "weights": parts[3]}


def path_generator(seed: int, engine: int, path_id: int, level: int = 0) -> np.random.Generator:
    """Independent Philox stream for one (engine, path, refinement level)."""
    ss = np.random.SeedSequence(seed, spawn_key=(engine, path_id, level))
    return np.random.Generator(np.random.Philox(ss))


def brownian_increments(seed: int, engine: int, path_ids, n_steps: int, dt: float) -> np.ndarray:
    out = np.empty((len(path_ids), n_steps))
    sd = np.sqrt(dt)
    for r, pid in enumerate(path_ids):
        out[r] = sd * path_generator(seed, engine, int(pid)).standard_normal(n_steps)
    return out


def refine_increments(dw: np.ndarray, dt: float, seed: int, engine: int, path_ids,
                      level: int) -> np.ndarray:
    """Split each increment in two by sampling the Brownian-bridge midpoint.

    The midpoint of an increment dW over a step dt is dW/2 + sqrt(dt/4) Z, so the
    refined pair sums back to dW exactly up to rounding.  ``level`` >= 1 picks the
    substream used for Z.
    """
    z = np.empty_like(dw)
    for r, pid in enumerate(path_ids):
        z[r] = path_generator(seed, engine, int(pid), level).standard_normal(dw.shape[1])
    half = 0.5 * dw
    bridge = np.sqrt(dt / 4.0) * z
    out = np.empty((dw.shape[0], 2 * dw.shape[1]))
    out[:, 0::2] = half + bridge
    out[:, 1::2] = half - bridge
    return out


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("DISTDRIFT_THREADS", "1")))
    except ValueError:
        return 1


def _chunks(n: int, k: int) -> list:
    bounds = np.linspace(0, n, min(k, n) + 1).astype(int)
    return [np.arange(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _check_x0(cfg: SimConfig, m: HarmonicMap) -> None:
    lo, hi = m.domain_range
    if not lo < cfg.x0 < hi:
        raise OutOfRange(f"x0={cfg.x0} outside the coefficient grid ({lo}, {hi})")


def _euler(cfg: SimConfig, m: HarmonicMap, g: PathFunctional, dw: np.ndarray,
           s: Optional[CoefficientSet], weighted: bool):
    """Core loop on one chunk of paths.

    The transformed scheme uses drift h'(X_k) Gamma_k; the weighted scheme has no
    drift and accumulates Gamma~_k dW_k - 1/2 Gamma~_k^2 dt.  Both evaluate Gamma on
    the discrete stopped path X^{t_k} (left-point rule).
    """
    n_paths, n_steps = dw.shape
    times = cfg.dt * np.arange(n_steps + 1)
    dt = cfg.T / n_steps
    lo, hi = m.image_range
    x = np.empty((n_paths, n_steps + 1))
    y = np.empty((n_paths, n_steps + 1))
    y[:, 0] = float(m.h(np.array(cfg.x0)))
    x[:, 0] = cfg.x0
    clamped = np.zeros(n_paths, dtype=bool)
    logw = np.zeros(n_paths)
    stream = None if g.is_zero else g.stream(times, n_paths)
    sig = m.sigma
    for k in range(n_steps):
        xk = x[:, k]
        hp = m.hprime(xk)
        yk = y[:, k] + sig(xk) * hp * dw[:, k]
        if stream is not None:
            gam = stream.value(k, x)
            if weighted:
                gt = gam / s.sigma(xk)
                logw += gt * dw[:, k] - 0.5 * gt * gt * dt
            else:
                yk = yk + hp * gam * dt
        out = (yk <= lo) | (yk >= hi)
        if out.any():
            clamped |= out
            yk = np.clip(yk, lo, hi)
        y[:, k + 1] = yk
        x[:, k + 1] = m.inverse(yk)
    return x, y, logw, clamped


def _run(cfg: SimConfig, m: HarmonicMap, g: PathFunctional, s: Optional[CoefficientSet],
         scheme: str, dw: Optional[np.ndarray]) -> PathEnsemble:
    _check_x0(cfg, m)
    engine = ENGINE_TAG[scheme]
    ids = np.arange(cfg.n_paths)
    if dw is None:
        dw = brownian_increments(cfg.seed, engine, ids, cfg.n_steps, cfg.dt)
    elif dw.shape != (cfg.n_paths, cfg.n_steps):
        raise ValueError("increment override has the wrong shape")
    weighted = scheme == "girsanov-weighted"
    chunks = _chunks(cfg.n_paths, _threads())

    def work(idx):
        return _euler(cfg, m, g, dw[idx], s, weighted)

    if len(chunks) == 1:
        results = [work(chunks[0])]
    else:
        with ThreadPoolExecutor(len(chunks)) as ex:
            results = list(ex.map(work, chunks))
    x = np.concatenate([r[0] for r in results])
    y = np.concatenate([r[1] for r in results])
    logw = np.concatenate([r[2] for r in results])
    clamped = np.concatenate([r[3] for r in results])
    exits = int(clamped.sum())
    if exits > cfg.grid_exit_fraction * cfg.n_paths:
        raise GridExitLimit(
            f"{exits} of {cfg.n_paths} paths reached the edge of the tabulated image of h")
    weights = np.exp(logw) if weighted else np.ones(cfg.n_paths)
    return PathEnsemble(cfg.times, x, y, dw, weights, logw, ids, cfg.seed, scheme, exits, cfg)


def simulate_transformed(cfg: SimConfig, m: HarmonicMap, g: PathFunctional,
                         dw: Optional[np.ndarray] = None) -> PathEnsemble:
    """Euler-Maruyama on Y = h(X); X is recovered nodewise as h^{-1}(Y).

    ``dw`` overrides the Gaussian increments (shape (n_paths, n_steps)), which is
    how shared-noise refinements are run.
    """
    return _run(cfg, m, g, None, "transformed-euler", dw)


def simulate_weighted(cfg: SimConfig, m: HarmonicMap, s: CoefficientSet, g: PathFunctional,
                      dw: Optional[np.ndarray] = None, *, skip_preflight: bool = False) -> PathEnsemble:
    """Girsanov-weighted driftless engine; weights hold V_T.

    Runs :func:`preflight_novikov` first whenever ``g`` declares a growth constant,
    unless ``skip_preflight`` is set.  Raises :class:`WeightDegenerate` when
    N_eff = (sum w)^2 / sum w^2 falls below ``cfg.ess_floor * N``.
    """
    if g.growth_K is not None and not skip_preflight:
        preflight_novikov(cfg, m, g)
    e = _run(cfg, m, g, s, "girsanov-weighted", dw)
    if e.ess < cfg.ess_floor * cfg.n_paths:
        raise WeightDegenerate(
            f"effective sample size {e.ess:.1f} below {cfg.ess_floor:g} * {cfg.n_paths}")
    return e


@dataclass(frozen=True)
class PartitionPlan:
    """Coarsest uniform partition of [0, T] with c_i = 3/2 (t_i - t_{i-1}) K^2 k < 1/2."""

    n: int
    delta: float
    c: tuple
    k: float
    K: float
    sigma0_sup: float

    @property
    def status(self) -> str:
        return "PASS" if all(ci < 0.5 for ci in self.c) else "FAIL"

    def to_dict(self) -> dict:
        return {"n": self.n, "delta": self.delta, "c": self.c[0] if self.c else None,
                "k": self.k, "K": self.K, "sigma0_sup": self.sigma0_sup, "status": self.status}


def plan_partition(T: float, K: float, sigma0_sup: float) -> PartitionPlan:
    """Exact-arithmetic partition planner.

    With k = sup sigma_0^2 * T the condition c_i < 1/2 is T/n < 1/(3 K^2 k), so the
    coarsest uniform partition has n = floor(3 T K^2 k) + 1 intervals.  Rational
    arithmetic on the float inputs keeps n and the c_i reproducible bit for bit.
    """
    if K < 0 or T <= 0 or sigma0_sup < 0:
        raise ValueError("need T > 0, K >= 0 and sigma0_sup >= 0")
    Tq, Kq, sq = Fraction(T), Fraction(K), Fraction(sigma0_sup)
    kq = sq * sq * Tq
    n = int(3 * Tq * Kq * Kq * kq) + 1
    dq = Tq / n
    cq = Fraction(3, 2) * dq * Kq * Kq * kq
    c = float(cq)
    return PartitionPlan(n, float(dq), (c,) * n, float(kq), float(K), float(sigma0_sup))


def preflight_novikov(cfg: SimConfig, m: HarmonicMap, g: PathFunctional) -> PartitionPlan:
    if g.growth_K is None:
        raise ValueError("functional declares no growth constant K")
    sup = m.sigma0_sup()
    if not np.isfinite(sup) or sup > cfg.sigma0_cap:
        raise UnboundedSigma0(f"table sup of sigma_0 is {sup:g} (cap {cfg.sigma0_cap:g})")
    return plan_partition(cfg.T, g.growth_K, sup)


def refinement_levels(cfg: SimConfig, m: HarmonicMap, g: PathFunctional, levels: int,
                      path_ids=None) -> list:
    """Transformed-engine ensembles at n, 2n, ..., 2^(levels-1) n steps that share one
    Brownian path per id (finer increments obtained by bridge refinement)."""
    engine = ENGINE_TAG["transformed-euler"]
    ids = np.arange(cfg.n_paths) if path_ids is None else np.asarray(path_ids)
    dt = cfg.dt
    dw = brownian_increments(cfg.seed, engine, ids, cfg.n_steps, dt)
    out = []
    for lev in range(levels):
        c = SimConfig(cfg.T, dw.shape[1], len(ids), cfg.x0, cfg.seed, cfg.scheme,
                      cfg.grid_exit_fraction, cfg.ess_floor, cfg.sigma0_cap)
        out.append(simulate_transformed(c, m, g, dw))
        if lev + 1 < levels:
            dw = refine_increments(dw, dt, cfg.seed, engine, ids, lev + 1)
            dt /= 2
    return out
