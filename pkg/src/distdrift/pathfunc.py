"""Non-anticipative path functionals Gamma on stopped paths, their transforms
Gamma-tilde and Gamma-bar, and empirical validators for the growth and
Lipschitz hypotheses.

Paths live on a uniform time grid.  A functional is evaluated either on a single
:class:`StoppedPath` (``eval_gamma``) or incrementally along a batch of paths by a
:class:`GammaStream`, which is what the simulation engines use.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .coeffs import CoefficientSet
from .errors import NonPositiveSigma, OutOfRange
from .htransform import HarmonicMap

KINDS = ("instantaneous", "delay", "running-max", "integral-average", "user")

G_FUNCTIONS: dict[str, Callable] = {
    "identity": lambda v: v,
    "tanh": np.tanh,
    "sin": np.sin,
    "cos": np.cos,
    "atan": np.arctan,
    "sign": np.sign,
    "abs": np.abs,
    "clip": lambda v: np.clip(v, -1.0, 1.0),
}


@dataclass(frozen=True)
class StoppedPath:
    """An element (s, eta) of Lambda: eta sampled on ``times`` and frozen after s."""

    times: np.ndarray
    values: np.ndarray
    s: float
    index: int = field(init=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape or times.ndim != 1:
            raise ValueError("times and values must be matching 1-d arrays")
        k = _grid_index(times, self.s)
        if np.any(values[k + 1:] != values[k]):
            raise ValueError("path is not frozen after s")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "index", k)

    @classmethod
    def stop(cls, times, values, s: float) -> "StoppedPath":
        """Freeze ``values`` at time ``s`` (eta^s)."""
        times = np.asarray(times, dtype=float)
        values = np.array(values, dtype=float)
        k = _grid_index(times, s)
        values[k + 1:] = values[k]
        return cls(times, values, float(times[k]))

    @property
    def current(self) -> float:
        return float(self.values[self.index])

    def mapped(self, fn) -> "StoppedPath":
        """Pointwise image fn o eta, still stopped at s."""
        return StoppedPath(self.times, fn(self.values), self.s)


def _grid_index(times: np.ndarray, s: float) -> int:
    dt = times[1] - times[0]
    k = int(round((s - times[0]) / dt))
    if k < 0 or k >= times.size or abs(times[k] - s) > 1e-9 * max(1.0, abs(s)):
        raise ValueError(f"s={s} is not a node of the time grid")
    return k


@dataclass(frozen=True)
class PathFunctional:
    """Gamma(s, eta) = offset + scale * g(arg(s, eta)) where arg depends on ``kind``:

    ``instantaneous`` eta(s); ``delay`` eta((s - tau)^+); ``running-max``
    max_{r<=s} eta(r); ``integral-average`` int_0^s eta(r) dr (trapezoid).
    ``user`` calls ``fn(s, times, values)`` on the stopped history; an optional
    ``batch_fn(s, history)`` with ``history`` of shape (N, k+1) speeds up engines.

    ``growth_K`` and ``lipschitz_K`` are the declared constants of the growth and
    Lipschitz hypotheses (``None`` when not claimed).
    """

    kind: str = "instantaneous"
    g: Union[str, Callable] = "identity"
    tau: float = 0.0
    scale: float = 1.0
    offset: float = 0.0
    fn: Optional[Callable] = None
    batch_fn: Optional[Callable] = None
    growth_K: Optional[float] = None
    lipschitz_K: Optional[float] = None
    gamma_at_zero_sup: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.kind == "user" and self.fn is None and self.batch_fn is None:
            raise ValueError("user functional needs fn or batch_fn")
        if isinstance(self.g, str) and self.g not in G_FUNCTIONS:
            raise ValueError(f"unknown g {self.g!r}")
        if self.tau < 0:
            raise ValueError("delay must be non-negative")

    @classmethod
    def constant(cls, c: float, **kw) -> "PathFunctional":
        # growth and Lipschitz constants concern Gamma~ and Gamma-bar, which depend
        # on sigma and h, so they are not filled in here.
        return cls(kind="instantaneous", g="identity", scale=0.0, offset=float(c),
                   gamma_at_zero_sup=abs(float(c)), name=kw.pop("name", f"const {c}"), **kw)

    @property
    def is_zero(self) -> bool:
        return self.kind != "user" and self.scale == 0.0 and self.offset == 0.0

    @property
    def gfun(self) -> Callable:
        return G_FUNCTIONS[self.g] if isinstance(self.g, str) else self.g

    def scaled(self, factor: float) -> "PathFunctional":
        """factor * Gamma (used for corrupted-drift negative controls)."""
        if self.kind == "user":
            fn, bfn = self.fn, self.batch_fn
            return dataclasses.replace(
                self,
                fn=None if fn is None else (lambda s, t, v: factor * fn(s, t, v)),
                batch_fn=None if bfn is None else (lambda s, h: factor * bfn(s, h)),
                name=f"{factor}*{self.label}")
        return dataclasses.replace(self, scale=self.scale * factor,
                                   offset=self.offset * factor,
                                   name=f"{factor}*{self.label}")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        gname = self.g if isinstance(self.g, str) else getattr(self.g, "__name__", "g")
        return f"{self.kind}({gname})"

    def _apply(self, arg):
        return self.offset + self.scale * self.gfun(arg)

    def stream(self, times: np.ndarray, n_paths: int) -> "GammaStream":
        return GammaStream(self, np.asarray(times, dtype=float), n_paths)


class GammaStream:
    """Evaluates Gamma(t_k, X^{t_k}) for k = 0, 1, 2, ... along a batch of paths.

    ``value(k, paths)`` must be called with consecutive k; only columns 0..k of
    ``paths`` are read, which keeps the evaluation adapted.
    """

    def __init__(self, g: PathFunctional, times: np.ndarray, n_paths: int):
        self.g = g
        self.times = times
        self.dt = float(times[1] - times[0])
        self.n = n_paths
        self._next = 0
        self._acc = None

    def value(self, k: int, paths: np.ndarray) -> np.ndarray:
        if k != self._next:
            raise ValueError("GammaStream must be advanced one step at a time")
        self._next += 1
        g = self.g
        xk = paths[:, k]
        if g.kind == "instantaneous":
            arg = xk
        elif g.kind == "delay":
            arg = _delayed_column(paths, self.times[k] - g.tau, self.dt, k)
        elif g.kind == "running-max":
            self._acc = xk.copy() if k == 0 else np.maximum(self._acc, xk)
            arg = self._acc
        elif g.kind == "integral-average":
            if k == 0:
                self._acc = np.zeros(paths.shape[0])
            else:
                self._acc = self._acc + 0.5 * (paths[:, k - 1] + xk) * self.dt
            arg = self._acc
        else:
            s = float(self.times[k])
            if g.batch_fn is not None:
                return np.asarray(g.batch_fn(s, paths[:, : k + 1]), dtype=float)
            t = self.times[: k + 1]
            return np.array([g.fn(s, t, row) for row in paths[:, : k + 1]], dtype=float)
        return g._apply(arg)


def _delayed_column(paths: np.ndarray, u: float, dt: float, k: int) -> np.ndarray:
    if u <= 0:
        return paths[:, 0]
    q = u / dt
    i = int(np.floor(q))
    w = q - i
    if w < 1e-9 or i >= k:
        return paths[:, min(i, k)]
    if w > 1 - 1e-9:
        return paths[:, i + 1]
    return (1 - w) * paths[:, i] + w * paths[:, i + 1]


def gamma_along(g: PathFunctional, times: np.ndarray, paths: np.ndarray) -> np.ndarray:
    """Gamma(t_k, X^{t_k}) for every node, shape (N, n+1)."""
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    st = g.stream(times, paths.shape[0])
    return np.column_stack([st.value(k, paths) for k in range(paths.shape[1])])


def eval_gamma(g: PathFunctional, p: StoppedPath) -> float:
    k = p.index
    v = p.values
    if g.kind == "user":
        if g.fn is not None:
            return float(g.fn(p.s, p.times[: k + 1], v[: k + 1]))
        return float(np.asarray(g.batch_fn(p.s, v[None, : k + 1]))[0])
    if g.kind == "instantaneous":
        arg = v[k]
    elif g.kind == "delay":
        u = max(p.s - g.tau, 0.0)
        arg = np.interp(u, p.times[: k + 1], v[: k + 1])
    elif g.kind == "running-max":
        arg = np.max(v[: k + 1])
    else:
        dt = p.times[1] - p.times[0]
        seg = v[: k + 1]
        arg = dt * (seg.sum() - 0.5 * (seg[0] + seg[-1])) if k > 0 else 0.0
    return float(g._apply(np.float64(arg)))


def eval_gamma_tilde(g: PathFunctional, s: CoefficientSet, p: StoppedPath) -> float:
    """Gamma(s, eta) / sigma(eta(s))."""
    sig = float(s.sigma(np.array(p.current)))
    if sig <= 0:
        raise NonPositiveSigma(f"sigma({p.current}) = {sig}")
    return eval_gamma(g, p) / sig


def eval_gamma_bar(g: PathFunctional, m: HarmonicMap, p: StoppedPath) -> float:
    """h'(h^{-1}(eta(s))) Gamma(s, h^{-1} o eta^s) for a path in transformed coordinates."""
    lo, hi = m.image_range
    if np.any(p.values < lo) or np.any(p.values > hi):
        raise OutOfRange("path leaves the image of h")
    xp = p.mapped(m.inverse)
    return float(m.hprime(np.array(xp.current))) * eval_gamma(g, xp)


@dataclass
class ValidationReport:
    name: str
    status: str
    worst_ratio: float
    constant: Optional[float]
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "PASS"

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "worst_ratio": self.worst_ratio,
                "constant": self.constant, **self.details}


def _x_paths(m: HarmonicMap, paths: np.ndarray) -> np.ndarray:
    lo, hi = m.image_range
    if np.any(paths < lo) or np.any(paths > hi):
        raise OutOfRange("sample path leaves the image of h")
    return m.inverse(paths)


def validate_growth(g: PathFunctional, m: HarmonicMap, s: CoefficientSet, times, paths,
                    K: Optional[float] = None) -> ValidationReport:
    """Empirical check of sup_s |Gamma~(s, h^{-1} o eta^s)| <= K (1 + sup_s |eta(s)|).

    ``paths`` are sample paths eta in transformed coordinates, shape (N, n+1).
    The worst ratio lhs / rhs over the sample is reported; PASS iff it is <= 1.
    Without a declared constant the ratio is taken with K = 1 (so it is the
    smallest constant the sample supports) and the status is INCONCLUSIVE.
    """
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    if paths.shape[0] == 0:
        raise ValueError("empty path sample")
    K = g.growth_K if K is None else K
    xs = _x_paths(m, paths)
    gt = gamma_along(g, times, xs) / s.sigma(xs)
    lhs = np.max(np.abs(gt), axis=1)
    rhs = 1.0 + np.max(np.abs(paths), axis=1)
    kk = 1.0 if not K else K
    worst = float(np.max(lhs / (kk * rhs)))
    if K is None:
        status = "INCONCLUSIVE"
    elif K == 0:
        status = "PASS" if np.all(lhs == 0) else "FAIL"
        worst = 0.0 if status == "PASS" else float("inf")
    else:
        status = "PASS" if worst <= 1.0 else "FAIL"
    return ValidationReport("growth", status, worst, K, {"n_paths": int(paths.shape[0])})


def gamma_bar_along(g: PathFunctional, m: HarmonicMap, times, paths) -> np.ndarray:
    xs = _x_paths(m, paths)
    return m.hprime(xs) * gamma_along(g, times, xs)


def validate_lipschitz(g: PathFunctional, m: HarmonicMap, times, pairs,
                       K: Optional[float] = None, rtol: float = 1e-9) -> ValidationReport:
    """Empirical check of the Lipschitz bound on Gamma-bar over path pairs:

        |Gb(s, eta1) - Gb(s, eta2)| <= K (|eta1(s) - eta2(s)| + int_0^s |eta1 - eta2| dr)

    plus finiteness of sup_s |Gb(s, 0)| on the zero path.  ``pairs`` is a tuple of
    two (N, n+1) arrays in transformed coordinates.  As in :func:`validate_growth`
    the reported ratio is relative to K (K = 1 when undeclared); the raw quotient
    is kept as ``empirical_constant``.
    """
    a, b = (np.atleast_2d(np.asarray(p, dtype=float)) for p in pairs)
    if a.shape != b.shape or a.shape[0] == 0:
        raise ValueError("need a nonempty sample of matching path pairs")
    times = np.asarray(times, dtype=float)
    dt = float(times[1] - times[0])
    K = g.lipschitz_K if K is None else K
    ga = gamma_bar_along(g, m, times, a)
    gb = gamma_bar_along(g, m, times, b)
    num = np.abs(ga - gb)
    d = np.abs(a - b)
    integral = np.concatenate(
        [np.zeros((d.shape[0], 1)), np.cumsum(0.5 * (d[:, 1:] + d[:, :-1]) * dt, axis=1)], axis=1)
    den = d + integral
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, num / den, np.where(num > 0, np.inf, 0.0))
    quotient = float(np.max(ratio))
    worst = quotient / K if K else quotient
    zero = gamma_bar_along(g, m, times, np.zeros((1, times.size)))
    zero_sup = float(np.max(np.abs(zero)))
    finite = bool(np.isfinite(zero_sup))
    if K is None:
        status = "INCONCLUSIVE"
    else:
        status = "PASS" if (quotient <= K * (1 + rtol) + rtol and finite) else "FAIL"
    return ValidationReport("lipschitz", status, worst, K,
                            {"gamma_bar_zero_sup": zero_sup, "n_pairs": int(a.shape[0]),
                             "empirical_constant": quotient})


def validate_sigma0_modulus(m: HarmonicMap, modulus: str = "lipschitz",
                            constant: Optional[float] = None, n_pairs: int = 2000,
                            max_gap: Optional[float] = None, seed: int = 0) -> ValidationReport:
    """Empirical check |sigma0(x) - sigma0(y)| <= C l(|x - y|) on image-grid node pairs,
    with l(u) = u (``lipschitz``) or sqrt(u) (``holder``, exponent 1/2).

    Both moduli satisfy int_0 l^{-2} = infinity.  A tabulated sigma_0 can only be
    falsified this way, never certified.
    """
    if modulus not in ("lipschitz", "holder"):
        raise ValueError("modulus must be 'lipschitz' or 'holder'")
    y = m.h_values
    s0 = m.sigma0_cache
    rng = np.random.default_rng(seed)
    i = rng.integers(0, y.size, n_pairs)
    if max_gap is None:
        j = rng.integers(0, y.size, n_pairs)
    else:
        step = max(1, int(max_gap / np.mean(np.diff(y))))
        j = np.clip(i + rng.integers(1, step + 1, n_pairs), 0, y.size - 1)
    keep = i != j
    gap = np.abs(y[i] - y[j])[keep]
    diff = np.abs(s0[i] - s0[j])[keep]
    l = gap if modulus == "lipschitz" else np.sqrt(gap)
    worst = float(np.max(diff / l)) if l.size else 0.0
    if constant is None:
        status = "INCONCLUSIVE"
    else:
        status = "PASS" if worst <= constant else "FAIL"
    return ValidationReport(f"sigma0-{modulus}", status, worst, constant,
                            {"n_pairs": int(keep.sum())})
