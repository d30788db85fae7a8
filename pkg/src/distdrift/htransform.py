"""The L-harmonic map h (h(0) = 0, h' = e^{-Sigma}), its inverse, sigma_0 and the
operator calculus on the domain D_L.

A function f belongs to D_L exactly when f' = e^{-Sigma} phi for some C^1 phi, and
then Lf = phi' e^{-Sigma} sigma^2 / 2.  :class:`DomainFunction` carries phi and
phi' so membership holds by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from ._numerics import (
    MonotoneLocator,
    UniformHermite,
    as_vectorized,
    bump,
    cumulative_from_zero,
    monotone_slopes,
)
from .coeffs import CoefficientSet, SigmaTable
from .errors import ConsistencyError, NonMonotone, OutOfRange

NEWTON_MAX_ITER = 60


@dataclass(frozen=True)
class HarmonicMap:
    grid: np.ndarray
    h_values: np.ndarray
    hprime_values: np.ndarray
    sigma0_cache: np.ndarray
    sigma_table: SigmaTable = field(repr=False)
    sigma: Callable = field(repr=False)
    _forward: UniformHermite = field(init=False, repr=False, compare=False)
    _locate: MonotoneLocator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        slopes = monotone_slopes(self.grid, self.h_values, self.hprime_values)
        object.__setattr__(self, "_forward", UniformHermite(self.grid, self.h_values, slopes))
        object.__setattr__(self, "_locate", MonotoneLocator(self.h_values))

    @property
    def image_range(self) -> tuple[float, float]:
        return float(self.h_values[0]), float(self.h_values[-1])

    @property
    def domain_range(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    def Sigma(self, x):
        return self.sigma_table(x)

    def h(self, x):
        x = np.asarray(x, dtype=float)
        self._check_domain(x)
        return self._forward(x)

    def hprime(self, x):
        """e^{-Sigma(x)} evaluated from the Sigma table."""
        return np.exp(-self.sigma_table(x))

    def inverse(self, y):
        """h^{-1}(y): inverse of the tabulated h, refined to round-off.

        The inverse Hermite table gives the starting point; safeguarded Newton
        iterations on the forward interpolant (bisection whenever a step leaves the
        bracketing cell) then solve h(x) = y.
        """
        y = np.asarray(y, dtype=float)
        lo_y, hi_y = self.image_range
        if np.any(y < lo_y) or np.any(y > hi_y):
            raise OutOfRange("value outside the image of h")
        fwd = self._forward
        j = self._locate(y)
        lo, hi = self.grid[j], self.grid[j + 1]
        # Inverse cubic Hermite on the located cell as the starting point.
        y0, y1 = self.h_values[j], self.h_values[j + 1]
        dy = y1 - y0
        t = (y - y0) / dy
        m0 = dy / fwd.slopes[j]
        m1 = dy / fwd.slopes[j + 1]
        t2 = t * t
        t3 = t2 * t
        x = (lo * (2 * t3 - 3 * t2 + 1) + m0 * (t3 - 2 * t2 + t)
             + hi * (3 * t2 - 2 * t3) + m1 * (t3 - t2))
        x = np.clip(x, lo, hi)
        # Hermite evaluation noise sits near 1e-14; tighter stopping only bisects noise.
        tol = 1e-13
        for _ in range(NEWTON_MAX_ITER):
            r = fwd.eval_cell(j, x) - y
            hi = np.where(r > 0, x, hi)
            lo = np.where(r <= 0, x, lo)
            xn = x - r / fwd.eval_cell(j, x, 1)
            outside = ~((xn >= lo) & (xn <= hi))
            xn = np.where(outside, 0.5 * (lo + hi), xn)
            scale = tol * np.maximum(1.0, np.abs(x))
            done = np.all((np.abs(xn - x) <= scale) | (hi - lo <= scale))
            x = xn
            if done:
                break
        return x

    def sigma0(self, y):
        """sigma_0(y) = sigma(h^{-1}(y)) h'(h^{-1}(y))."""
        x = self.inverse(y)
        return self.sigma(x) * self.hprime(x)

    def sigma0_sup(self) -> float:
        return float(np.max(self.sigma0_cache))

    def clamp_image(self, y):
        lo, hi = self.image_range
        return np.clip(y, lo, hi)

    def _check_domain(self, x):
        lo, hi = self.domain_range
        if np.any(x < lo) or np.any(x > hi):
            raise OutOfRange("point outside the coefficient grid")

    def to_csv(self, path) -> None:
        """Write columns x, Sigma, h, h', sigma0(h(x)) for plotting."""
        data = np.column_stack([self.grid, self.sigma_table.values, self.h_values,
                                self.hprime_values, self.sigma0_cache])
        np.savetxt(path, data, delimiter=",", fmt="%.17g",
                   header="x,Sigma,h,hprime,sigma0_of_h", comments="")


def build_h(t: SigmaTable, s: CoefficientSet) -> HarmonicMap:
    """Tabulate h by composite Simpson of e^{-Sigma} and sigma_0 on the image nodes."""
    grid = t.grid
    dx = float(grid[1] - grid[0])
    i0 = int(np.flatnonzero(grid == 0.0)[0])
    with np.errstate(over="ignore"):
        hprime = np.exp(-t.values)
    if not np.all(np.isfinite(hprime)) or np.any(hprime <= 0):
        raise NonMonotone("e^{-Sigma} is not finite and positive on the grid")
    h = cumulative_from_zero(hprime, dx, i0)
    if np.any(np.diff(h) <= 0):
        raise NonMonotone("tabulated h is not strictly increasing")
    sigma = as_vectorized(s.sigma)
    sigma0 = sigma(grid) * hprime
    return HarmonicMap(grid, h, hprime, sigma0, t, sigma)


class DomainFunction:
    """f in D_L represented by phi with f' = e^{-Sigma} phi.

    ``primitive`` optionally gives f in closed form (as a function of x and the
    harmonic map); otherwise f is recovered by cumulative Simpson with f(0) = f0.
    """

    def __init__(self, phi, phiprime, description: str = "",
                 primitive: Optional[Callable] = None):
        self.phi = as_vectorized(phi)
        self.phiprime = as_vectorized(phiprime)
        self.description = description
        self.primitive = primitive
        self._tables: dict = {}

    def __repr__(self):
        return f"DomainFunction({self.description!r})"

    def fprime(self, m: HarmonicMap, x):
        return m.hprime(x) * self.phi(x)

    def values(self, m: HarmonicMap, x, f0: float = 0.0):
        x = np.asarray(x, dtype=float)
        if self.primitive is not None:
            return self.primitive(m, x) + f0
        key = (id(m), float(f0))
        spline = self._tables.get(key)
        if spline is None:
            grid = m.grid
            dx = float(grid[1] - grid[0])
            i0 = int(np.flatnonzero(grid == 0.0)[0])
            slope = m.hprime_values * self.phi(grid)
            spline = CubicHermiteSpline(grid, cumulative_from_zero(slope, dx, i0) + f0, slope)
            self._tables[key] = spline
        return spline(x)


def harmonic() -> DomainFunction:
    """f = h (phi = 1)."""
    return DomainFunction(lambda x: 1.0, lambda x: 0.0, "h",
                          primitive=lambda m, x: m.h(x))


def constant(c: float) -> DomainFunction:
    return DomainFunction(lambda x: 0.0, lambda x: 0.0, f"const {c}",
                          primitive=lambda m, x: np.full_like(x, c, dtype=float))


def compact_bump(center: float = 0.0, radius: float = 3.0) -> DomainFunction:
    """phi = 1 + bump((x - center)/radius): smooth, with phi' compactly supported."""

    def phi(x):
        return 1.0 + bump((x - center) / radius)

    def phiprime(x):
        u = (np.asarray(x, dtype=float) - center) / radius
        inside = np.abs(u) < 1
        out = np.zeros_like(u)
        ui = u[inside]
        out[inside] = bump(ui) * (-2 * ui / (1 - ui * ui) ** 2) / radius
        return out

    return DomainFunction(phi, phiprime, f"compact-bump(c={center}, r={radius})")


def apply_L(f: DomainFunction, m: HarmonicMap, s: CoefficientSet, x):
    """Lf(x) = phi'(x) e^{-Sigma(x)} sigma(x)^2 / 2."""
    x = np.asarray(x, dtype=float)
    m._check_domain(x)
    sig = as_vectorized(s.sigma)(x)
    return f.phiprime(x) * m.hprime(x) * sig ** 2 / 2


def square_in_domain(f: DomainFunction, f0: float, m: HarmonicMap) -> DomainFunction:
    """f^2 in D_L via phi_2 = 2 f phi, so L f^2 = sigma^2 f'^2 + 2 f Lf."""

    def phi2(x):
        return 2 * f.values(m, x, f0) * f.phi(x)

    def phi2prime(x):
        return 2 * (f.fprime(m, x) * f.phi(x) + f.values(m, x, f0) * f.phiprime(x))

    return DomainFunction(phi2, phi2prime, f"({f.description})^2",
                          primitive=lambda mm, x: f.values(mm, x, f0) ** 2)


def transfer_operator(f: DomainFunction, m: HarmonicMap, y, *, s: Optional[CoefficientSet] = None,
                      step: float = 1e-3, rtol: float = 1e-6):
    """1/2 sigma_0(y)^2 (f o h^{-1})''(y), the generator of Y = h(X) applied to f o h^{-1}.

    (f o h^{-1})' = phi o h^{-1}, and its y-derivative is taken by a
    Richardson-extrapolated central difference.  When ``s`` is given the result is
    cross-checked against ``apply_L`` at h^{-1}(y) and :class:`ConsistencyError`
    is raised on disagreement beyond ``rtol * (1 + |Lf|)``.
    """
    y = np.asarray(y, dtype=float)
    lo, hi = m.image_range
    if np.any(y <= lo) or np.any(y >= hi):
        raise OutOfRange("y outside the interior of the image of h")
    d = np.minimum(step, 0.25 * np.minimum(y - lo, hi - y))

    def central(delta):
        return (f.phi(m.inverse(y + delta)) - f.phi(m.inverse(y - delta))) / (2 * delta)

    second = (4 * central(d / 2) - central(d)) / 3
    value = 0.5 * m.sigma0(y) ** 2 * second
    if s is not None:
        direct = apply_L(f, m, s, m.inverse(y))
        if np.any(np.abs(value - direct) > rtol * (1 + np.abs(direct))):
            raise ConsistencyError("transfer operator disagrees with L f o h^{-1}")
    return value
