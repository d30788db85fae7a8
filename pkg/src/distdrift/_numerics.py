"""Small numerical kernels shared across modules (quadrature, mollifier, interpolation)."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

GL_NODES = 128


def bump(u):
    """Unnormalized C-infinity bump exp(-1/(1-u^2)) supported on [-1, 1]."""
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1.0
    out = np.zeros_like(u)
    ui = u[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ui * ui))
    return out


@lru_cache(maxsize=None)
def bump_rule(n: int = GL_NODES) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on [-1, 1] with weights folded against the unit-mass bump.

    The weights are renormalized to sum to exactly one, so constants are reproduced
    without quadrature error.
    """
    u, w = np.polynomial.legendre.leggauss(n)
    wk = w * bump(u)
    return u, wk / wk.sum()


def mollify(fn, x, eps: float):
    """(fn * rho_eps)(x) for a vectorized callable ``fn``."""
    x = np.asarray(x, dtype=float)
    u, wk = bump_rule()
    vals = fn(x[..., None] - eps * u)
    vals = np.broadcast_to(vals, x.shape + u.shape)
    return vals @ wk


@lru_cache(maxsize=1)
def _bump_cdf_spline() -> CubicHermiteSpline:
    # Tabulate the CDF on a fine grid; each cell is integrated with Gauss-Legendre
    # and the interpolant uses the exact density as slope data.
    knots = np.linspace(-1.0, 1.0, 4097)
    u, w = np.polynomial.legendre.leggauss(32)
    a, b = knots[:-1], knots[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    cell = (bump(mid[:, None] + half[:, None] * u) @ w) * half
    cdf = np.concatenate([[0.0], np.cumsum(cell)])
    total = cdf[-1]
    return CubicHermiteSpline(knots, cdf / total, bump(knots) / total)


def bump_cdf(u):
    """CDF of the unit-mass bump kernel, exactly 0 below -1 and 1 above 1."""
    u = np.asarray(u, dtype=float)
    out = np.where(u >= 1.0, 1.0, 0.0)
    inside = np.abs(u) < 1.0
    if np.any(inside):
        out[inside] = _bump_cdf_spline()(u[inside])
    return out


def _cell_integrals(f: np.ndarray, dx: float) -> np.ndarray:
    """int over each cell [x_i, x_{i+1}] from four-point cubic interpolation."""
    n = f.size
    if n == 3:
        c0 = dx / 12 * (5 * f[0] + 8 * f[1] - f[2])
        c1 = dx / 12 * (-f[0] + 8 * f[1] + 5 * f[2])
        return np.array([c0, c1])
    cells = np.empty(n - 1)
    cells[1:-1] = dx / 24 * (-f[:-3] + 13 * f[1:-2] + 13 * f[2:-1] - f[3:])
    cells[0] = dx / 24 * (9 * f[0] + 19 * f[1] - 5 * f[2] + f[3])
    cells[-1] = dx / 24 * (f[-4] - 5 * f[-3] + 19 * f[-2] + 9 * f[-1])
    return cells


def _cumulative_one_side(f: np.ndarray, dx: float) -> np.ndarray:
    """Composite Simpson at even offsets; odd offsets add one cubic-exact cell.

    Both are exact for cubics, so the result has no odd/even sawtooth.
    """
    n = f.size
    if n == 1:
        return np.zeros(1)
    if n == 2:
        return np.array([0.0, 0.5 * dx * (f[0] + f[1])])
    out = np.empty(n)
    out[0] = 0.0
    pairs = dx / 3 * (f[0:-2:2] + 4 * f[1:-1:2] + f[2::2])
    out[2::2] = np.cumsum(pairs)
    cells = _cell_integrals(f, dx)
    out[1::2] = out[0:-1:2][: out[1::2].size] + cells[0::2][: out[1::2].size]
    return out


def cumulative_from_zero(f: np.ndarray, dx: float, i0: int) -> np.ndarray:
    """Cumulative composite Simpson integral of nodal values ``f`` anchored at node ``i0``.

    Returns F with F[i0] == 0 exactly and F[i] = int_{x[i0]}^{x[i]} f.
    """
    f = np.asarray(f, dtype=float)
    right = _cumulative_one_side(f[i0:], dx)
    left = -_cumulative_one_side(f[: i0 + 1][::-1], dx)[::-1]
    out = np.concatenate([left[:-1], right])
    out[i0] = 0.0
    return out


def simpson_error_estimate(f: np.ndarray, dx: float, i0: int) -> float:
    """Richardson estimate |S_h - S_2h| / 15 of the cumulative Simpson error."""
    worst = 0.0
    for side in (f[i0:], f[: i0 + 1][::-1]):
        coarse_f = side[::2]
        if coarse_f.size < 3:
            continue
        coarse = _cumulative_one_side(coarse_f, 2 * dx)
        fine_side = _cumulative_one_side(side, dx)[::2]
        worst = max(worst, float(np.max(np.abs(fine_side - coarse))) / 15.0)
    return worst


def fd_derivative(values: np.ndarray, dx: float) -> np.ndarray:
    """Fourth-order finite-difference derivative on a uniform grid."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 5:
        return np.gradient(v, dx, edge_order=min(2, n - 1) if n > 1 else 1)
    d = np.empty(n)
    d[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * dx)
    d[0] = (-25 * v[0] + 48 * v[1] - 36 * v[2] + 16 * v[3] - 3 * v[4]) / (12 * dx)
    d[1] = (-3 * v[0] - 10 * v[1] + 18 * v[2] - 6 * v[3] + v[4]) / (12 * dx)
    d[-1] = (25 * v[-1] - 48 * v[-2] + 36 * v[-3] - 16 * v[-4] + 3 * v[-5]) / (12 * dx)
    d[-2] = (3 * v[-1] + 10 * v[-2] - 18 * v[-3] + 6 * v[-4] - v[-5]) / (12 * dx)
    return d


def monotone_slopes(x: np.ndarray, y: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    """Return ``slopes`` if the cubic Hermite interpolant they define is monotone
    (Fritsch-Carlson condition on every cell), PCHIP slopes otherwise."""
    delta = np.diff(y) / np.diff(x)
    alpha = slopes[:-1] / delta
    beta = slopes[1:] / delta
    if np.all(delta > 0) and np.all(alpha ** 2 + beta ** 2 <= 9.0):
        return slopes
    return PchipInterpolator(x, y).derivative()(x)


class UniformHermite:
    """Cubic Hermite interpolant on a uniform grid; cells are located with floor()."""

    def __init__(self, grid: np.ndarray, values: np.ndarray, slopes: np.ndarray):
        self.grid = np.asarray(grid, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.slopes = np.asarray(slopes, dtype=float)
        self.x0 = float(self.grid[0])
        self.dx = float(self.grid[1] - self.grid[0])
        self.ncell = self.grid.size - 1

    def cell(self, x) -> np.ndarray:
        j = np.floor((np.asarray(x, dtype=float) - self.x0) / self.dx).astype(np.intp)
        return np.clip(j, 0, self.ncell - 1)

    def eval_cell(self, j, x, nu: int = 0):
        h = self.dx
        t = (x - self.grid[j]) / h
        y0, y1 = self.values[j], self.values[j + 1]
        m0, m1 = self.slopes[j] * h, self.slopes[j + 1] * h
        if nu == 0:
            t2 = t * t
            t3 = t2 * t
            return (y0 * (2 * t3 - 3 * t2 + 1) + m0 * (t3 - 2 * t2 + t)
                    + y1 * (3 * t2 - 2 * t3) + m1 * (t3 - t2))
        if nu == 1:
            t2 = t * t
            return (y0 * (6 * t2 - 6 * t) + m0 * (3 * t2 - 4 * t + 1)
                    + y1 * (6 * t - 6 * t2) + m1 * (3 * t2 - 2 * t)) / h
        raise ValueError("only nu in (0, 1) supported")

    def __call__(self, x, nu: int = 0):
        x = np.asarray(x, dtype=float)
        return self.eval_cell(self.cell(x), x, nu)


class MonotoneLocator:
    """Find the cell of a strictly increasing table containing each query.

    A uniform bucket table maps a query to a starting cell; a short vectorized
    forward walk finishes the job.  Buckets are no wider than the narrowest cell
    (subject to a memory cap), so the walk is usually one step.
    """

    MAX_BUCKETS = 1 << 22

    def __init__(self, knots: np.ndarray):
        self.knots = np.asarray(knots, dtype=float)
        span = self.knots[-1] - self.knots[0]
        width = max(float(np.min(np.diff(self.knots))), span / self.MAX_BUCKETS)
        nb = int(np.ceil(span / width)) + 1
        self.y0 = float(self.knots[0])
        self.width = width
        edges = self.y0 + width * np.arange(nb)
        self.start = np.clip(np.searchsorted(self.knots, edges, side="right") - 1,
                             0, self.knots.size - 2).astype(np.intp)

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        b = np.clip(((y - self.y0) / self.width).astype(np.intp), 0, self.start.size - 1)
        j = self.start[b]
        last = self.knots.size - 2
        while True:
            adv = (j < last) & (self.knots[np.minimum(j + 1, last + 1)] <= y)
            if not adv.any():
                return j
            j = j + adv


def as_vectorized(fn):
    """Wrap a callable so scalar-valued results broadcast to the input shape."""

    def wrapped(x):
        x = np.asarray(x, dtype=float)
        out = np.asarray(fn(x), dtype=float)
        if out.shape != x.shape:
            out = np.broadcast_to(out, x.shape).copy()
        return out

    wrapped.__name__ = getattr(fn, "__name__", "fn")
    wrapped.__wrapped__ = fn
    return wrapped
