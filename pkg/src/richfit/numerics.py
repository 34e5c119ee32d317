"""Shared numerical kernels.

Natural cubic splines, bracketed root finding, adaptive quadrature, the
inverse normal CDF and counter-based random streams. Everything here is
stateless except the generators returned by :func:`rng_stream`.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate as _integrate
from scipy import interpolate as _interpolate
from scipy import optimize as _optimize
from scipy import special as _special

from .errors import DomainError, QuadratureError, ValidationError

QUAD_TOL = 1e-12
QUAD_LIMIT = 60


@dataclass(frozen=True)
class CubicSpline:
    """Natural cubic interpolant through ``(knots, values)``."""

    knots: np.ndarray
    values: np.ndarray
    _impl: _interpolate.CubicSpline

    @property
    def lo(self) -> float:
        return float(self.knots[0])

    @property
    def hi(self) -> float:
        return float(self.knots[-1])

    def __call__(self, t, nu: int = 0):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < self.lo - 1e-12) or np.any(t_arr > self.hi + 1e-12):
            raise DomainError(f"spline evaluated outside [{self.lo}, {self.hi}]")
        out = self._impl(np.clip(t_arr, self.lo, self.hi), nu)
        return float(out) if out.ndim == 0 else out


def spline_fit(times: Sequence[float], values: Sequence[float]) -> CubicSpline:
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.ndim != 1 or t.shape != y.shape:
        raise ValidationError("spline_fit needs two 1-d arrays of equal length")
    if t.size < 3:
        raise ValidationError("spline_fit needs at least 3 points")
    if np.any(np.diff(t) <= 0):
        raise ValidationError("spline knots must be strictly increasing")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise ValidationError("spline data must be finite")
    impl = _interpolate.CubicSpline(t, y, bc_type="natural")
    return CubicSpline(t.copy(), y.copy(), impl)


def spline_derivatives(s: CubicSpline, t, order: int = 1):
    if order not in (1, 2):
        raise ValidationError("derivative order must be 1 or 2")
    return s(t, order)


def observed_inflection(s: CubicSpline, step: float | None = None) -> float:
    """Time of the interior maximum of S'.

    Dense scan with ``step`` (default: mean knot spacing / 100), then a
    parabolic refinement through the best scan point and its neighbours.
    """
    if step is None:
        step = float(np.mean(np.diff(s.knots))) / 100.0
    n = max(int(math.ceil((s.hi - s.lo) / step)) + 1, 3)
    grid = np.linspace(s.lo, s.hi, n)
    d1 = s(grid, 1)
    j = int(np.argmax(d1))
    if j == 0 or j == n - 1:
        raise DomainError("S' has no interior maximum: data do not cover the inflection")
    y0, y1, y2 = d1[j - 1], d1[j], d1[j + 1]
    denom = y0 - 2.0 * y1 + y2
    h = grid[1] - grid[0]
    shift = 0.0 if denom == 0 else 0.5 * (y0 - y2) / denom
    return float(grid[j] + np.clip(shift, -1.0, 1.0) * h)


def find_root(f: Callable[[float], float], bracket: tuple[float, float], tol: float = 1e-12) -> float:
    lo, hi = map(float, bracket)
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if not (np.isfinite(flo) and np.isfinite(fhi)) or flo * fhi > 0:
        raise DomainError(f"no sign change on [{lo}, {hi}]")
    return float(_optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=200))


def integrate(f: Callable[[float], float], a: float, b: float,
              tol: float = QUAD_TOL, limit: int = QUAD_LIMIT) -> float:
    """Adaptive Gauss-Kronrod quadrature of ``f`` on ``[a, b]``.

    Raises :class:`QuadratureError` (carrying the best estimate) when the
    subdivision budget runs out before the absolute tolerance is met.
    """
    if b < a:
        raise DomainError("integrate requires a <= b")
    if a == b:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", _integrate.IntegrationWarning)
        val, err, info = _integrate.quad(f, a, b, epsabs=tol, epsrel=1e-13, limit=limit,
                                         full_output=1)[:3]
    if err > max(tol, 1e-12 * abs(val)) or not np.isfinite(val):
        raise QuadratureError(f"quadrature on [{a}, {b}] did not converge (err={err:.3g})",
                              estimate=val, abserr=err)
    return float(val)


def norm_ppf(u):
    """Standard normal quantile."""
    return _special.ndtri(u)


def norm_cdf(x):
    return _special.ndtr(x)


def rng_stream(seed: int, stream_id: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, stream_id)``.

    Philox with a 128-bit key: the low word holds the seed, the high word
    the stream id, so distinct ids give non-overlapping streams.
    """
    key = (int(seed) % (1 << 64)) | ((int(stream_id) % (1 << 64)) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def worker_count() -> int:
    raw = os.environ.get("RICHFIT_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValidationError(f"RICHFIT_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def parallel_map(fn, items):
    """Order-preserving map over a thread pool capped by RICHFIT_THREADS."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
