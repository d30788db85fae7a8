"""Coefficients (sigma, b) and the drift potential Sigma = 2 int_0^x b'/sigma^2.

The drift b is only continuous, so b' is a distribution; the potential is obtained
by mollifying b and sigma with a C-infinity bump of bandwidth ``eps`` and
integrating the smooth integrand 2 b_eps' / sigma_eps^2 with composite Simpson.
Three sources are supported:

* :class:`ExplicitPotential` -- Sigma supplied directly (no mollification);
* :class:`SmoothDrift` -- b with its classical derivative b';
* :class:`PiecewiseLinearDrift` -- b sampled on knots and linearly interpolated,
  which covers a stored sample of a two-sided Brownian environment.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from ._numerics import (
    as_vectorized,
    bump_cdf,
    cumulative_from_zero,
    UniformHermite,
    fd_derivative,
    mollify,
    simpson_error_estimate,
)
from .errors import GridTooCoarse, NonPositiveSigma, NotConverged, OutOfRange

Fn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ExplicitPotential:
    Sigma: Fn
    Sigma_prime: Optional[Fn] = None


@dataclass(frozen=True)
class SmoothDrift:
    b: Fn
    bprime: Fn


@dataclass(frozen=True)
class PiecewiseLinearDrift:
    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size < 2:
            raise ValueError("piecewise-linear drift needs matching 1-d knots and values")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("drift knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.knots)

    def __call__(self, x):
        return np.interp(x, self.knots, self.values)

    @classmethod
    def from_csv(cls, path) -> "PiecewiseLinearDrift":
        """Load a two-column ``x,b`` CSV (an optional header line is skipped)."""
        with open(path) as fh:
            first = fh.readline()
        skip = 0 if _is_numeric_row(first) else 1
        data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
        return cls(data[:, 0], data[:, 1])


DriftSource = Union[ExplicitPotential, SmoothDrift, PiecewiseLinearDrift]


def _is_numeric_row(line: str) -> bool:
    try:
        [float(tok) for tok in line.strip().split(",")]
    except ValueError:
        return False
    return True


def brownian_environment(seed: int, half_width: float, spacing: float,
                         scale: float = 1.0) -> PiecewiseLinearDrift:
    """Sample ``scale * B`` for a two-sided Brownian motion B with B(0) = 0.

    The Brox diffusion dX = -1/2 B'(X) dt + dW corresponds to ``scale = -0.5``.
    """
    n = int(round(half_width / spacing))
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xB0,)))
    steps = rng.standard_normal((2, n)) * np.sqrt(spacing)
    right = np.concatenate([[0.0], np.cumsum(steps[0])])
    left = np.concatenate([[0.0], np.cumsum(steps[1])])
    knots = spacing * np.arange(-n, n + 1)
    values = np.concatenate([left[:0:-1], right]) * scale
    return PiecewiseLinearDrift(knots, values)


def uniform_grid(x_min: float, x_max: float, dx: float) -> np.ndarray:
    """Uniform grid with spacing ``dx`` that contains 0 exactly."""
    i_min = int(np.floor(x_min / dx + 1e-9))
    i_max = int(np.ceil(x_max / dx - 1e-9))
    return dx * np.arange(i_min, i_max + 1, dtype=float)


@dataclass(frozen=True)
class CoefficientSet:
    sigma: Fn
    drift: DriftSource
    mollifier_scale: float
    eval_grid: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.eval_grid, dtype=float)
        object.__setattr__(self, "eval_grid", grid)
        object.__setattr__(self, "sigma", as_vectorized(self.sigma))
        if grid.ndim != 1 or grid.size < 3 or np.any(np.diff(grid) <= 0):
            raise ValueError("eval_grid must be a strictly increasing 1-d array")
        steps = np.diff(grid)
        if np.max(np.abs(steps - steps.mean())) > 1e-9 * steps.mean():
            raise ValueError("eval_grid must be uniform")
        if not np.any(grid == 0.0):
            raise ValueError("eval_grid must contain 0")
        eps = self.mollifier_scale
        if not (eps > 0 and eps < (grid[-1] - grid[0]) / 10):
            raise ValueError("mollifier_scale must lie in (0, (x_max - x_min)/10)")
        if np.any(self.sigma(grid) <= 0):
            raise NonPositiveSigma("sigma must be strictly positive on the grid")

    @property
    def dx(self) -> float:
        return float(self.eval_grid[1] - self.eval_grid[0])

    @property
    def zero_index(self) -> int:
        return int(np.flatnonzero(self.eval_grid == 0.0)[0])

    @property
    def x_min(self) -> float:
        return float(self.eval_grid[0])

    @property
    def x_max(self) -> float:
        return float(self.eval_grid[-1])


@dataclass(frozen=True)
class SigmaTable:
    grid: np.ndarray
    values: np.ndarray
    derivative: np.ndarray
    convergence_gap: float
    quadrature_error: float = 0.0
    _spline: UniformHermite = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise NotConverged("Sigma table has non-finite entries")
        object.__setattr__(
            self, "_spline", UniformHermite(self.grid, self.values, self.derivative))

    def __call__(self, x):
        """Sigma at arbitrary points inside the grid (cubic Hermite)."""
        return self._spline(x)

    def prime(self, x):
        return self._spline(x, 1)


def _pl_mollified_slope(drift: PiecewiseLinearDrift, x: np.ndarray, eps: float) -> np.ndarray:
    # b_eps'(x) = sum_j s_j [Phi((x - k_j)/eps) - Phi((x - k_{j+1})/eps)];
    # only pieces meeting [x - eps, x + eps] contribute.
    knots, slopes = drift.knots, drift.slopes
    first = np.clip(np.searchsorted(knots, x - eps, side="right") - 1, 0, slopes.size - 1)
    last = np.clip(np.searchsorted(knots, x + eps, side="left"), 0, slopes.size - 1)
    span = int(np.max(last - first)) + 1
    out = np.zeros_like(x)
    for offset in range(span):
        j = first + offset
        live = j <= last
        jj = np.minimum(j, slopes.size - 1)
        w = bump_cdf((x - knots[jj]) / eps) - bump_cdf((x - knots[jj + 1]) / eps)
        out += np.where(live, slopes[jj] * w, 0.0)
    return out


def _integrand(c: CoefficientSet, eps: float) -> np.ndarray:
    """Nodal values of 2 b_eps' / sigma_eps^2."""
    grid = c.eval_grid
    sig_eps = mollify(c.sigma, grid, eps)
    if np.any(sig_eps <= 0):
        raise NonPositiveSigma("mollified sigma is not strictly positive")
    src = c.drift
    if isinstance(src, SmoothDrift):
        bprime_eps = mollify(as_vectorized(src.bprime), grid, eps)
    else:
        bprime_eps = _pl_mollified_slope(src, grid, eps)
    return 2.0 * bprime_eps / sig_eps ** 2


def _check_pl_coverage(c: CoefficientSet) -> None:
    src = c.drift
    pad = 3 * c.mollifier_scale
    if src.knots[0] > c.x_min - pad or src.knots[-1] < c.x_max + pad:
        raise OutOfRange(
            f"drift samples cover [{src.knots[0]}, {src.knots[-1]}], need "
            f"[{c.x_min - pad}, {c.x_max + pad}]")


def build_sigma_table(c: CoefficientSet, *, convergence_threshold: float = 1e-6,
                      quad_tol: float = 1e-8) -> SigmaTable:
    """Tabulate Sigma on ``c.eval_grid``.

    Raises
    ------
    NonPositiveSigma
        sigma (or its mollification) is not strictly positive.
    GridTooCoarse
        the Richardson estimate of the Simpson error exceeds ``quad_tol``.
    NotConverged
        the sup-gap between bandwidths eps and eps/2 exceeds ``convergence_threshold``.
    """
    grid, dx, i0 = c.eval_grid, c.dx, c.zero_index
    src = c.drift
    if isinstance(src, ExplicitPotential):
        fn = as_vectorized(src.Sigma)
        values = fn(grid) - float(fn(np.array(0.0)))
        values[i0] = 0.0
        if src.Sigma_prime is not None:
            deriv = as_vectorized(src.Sigma_prime)(grid)
        else:
            deriv = fd_derivative(values, dx)
        return SigmaTable(grid, values, deriv, 0.0)

    if isinstance(src, PiecewiseLinearDrift):
        _check_pl_coverage(c)
    eps = c.mollifier_scale
    f = _integrand(c, eps)
    err = simpson_error_estimate(f, dx, i0)
    if err > quad_tol:
        raise GridTooCoarse(f"Simpson error estimate {err:.3e} exceeds {quad_tol:.1e}")
    values = cumulative_from_zero(f, dx, i0)
    half = cumulative_from_zero(_integrand(c, eps / 2), dx, i0)
    gap = float(np.max(np.abs(values - half)))
    if gap > convergence_threshold:
        raise NotConverged(
            f"eps-halving gap {gap:.3e} exceeds threshold {convergence_threshold:.1e}")
    return SigmaTable(grid, values, f, gap, err)


@dataclass(frozen=True)
class NonExplosionReport:
    windows: tuple
    right_integrals: tuple
    left_integrals: tuple
    right_ratio: float
    left_ratio: float
    flag: str

    def to_dict(self) -> dict:
        return {
            "windows": list(self.windows),
            "right_integrals": list(self.right_integrals),
            "left_integrals": list(self.left_integrals),
            "right_ratio": self.right_ratio,
            "left_ratio": self.left_ratio,
            "flag": self.flag,
        }


SHELL_DENSITY_FLOOR = 0.5


def check_non_explosion(t: SigmaTable, base_window: Optional[float] = None) -> NonExplosionReport:
    """Finite-window heuristic for divergence of int e^{-Sigma} at both ends.

    Partial integrals I of e^{-Sigma} are taken over nested windows L, 2L, 4L on
    each side (trapezoid).  The shell ratio compares the mean density on the outer
    shell [2L, 4L] with the mean density on [0, L]:

        ratio = ((I(4L) - I(2L)) / 2L) / (I(L) / L)

    It stays near 1 for linear growth, is about 0.29 for sqrt growth and decays to 0
    for a convergent tail.  Both sides must reach ``SHELL_DENSITY_FLOOR`` for the
    ``PASS-heuristic`` flag; otherwise the report is ``INCONCLUSIVE``.  No finite
    window can prove the improper-integral condition.
    """
    grid = t.grid
    dx = float(grid[1] - grid[0])
    i0 = int(np.flatnonzero(grid == 0.0)[0])
    reach = min(grid.size - 1 - i0, i0)
    if base_window is None:
        steps = reach // 4
    else:
        steps = int(round(base_window / dx))
    if steps < 1 or 4 * steps > reach:
        raise OutOfRange("grid too narrow for three nested windows")
    dens = np.exp(-t.values)

    def partial(side: np.ndarray) -> tuple:
        out = []
        for m in (steps, 2 * steps, 4 * steps):
            seg = side[: m + 1]
            out.append(float(dx * (seg.sum() - 0.5 * (seg[0] + seg[-1]))))
        return tuple(out)

    right = partial(dens[i0:])
    left = partial(dens[: i0 + 1][::-1])

    def ratio(p: tuple) -> float:
        return float(((p[2] - p[1]) / 2.0) / p[0])

    rr, lr = ratio(right), ratio(left)
    flag = "PASS-heuristic" if min(rr, lr) >= SHELL_DENSITY_FLOOR else "INCONCLUSIVE"
    windows = (steps * dx, 2 * steps * dx, 4 * steps * dx)
    return NonExplosionReport(windows, right, left, rr, lr, flag)
