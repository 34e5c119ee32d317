"""First-passage time of the lognormal diffusion through a constant upper boundary.

Two estimators are provided: Monte Carlo on exact-transition paths (the oracle)
and a second-kind Volterra equation for the density, solved by trapezoid
stepping.  In log space the process is a Brownian motion with drift
``a(t) = h~(t) - sigma^2/2``; choosing ``k(t) = a(t)/2`` in the kernel

    Psi(b, t | y, s) = f(b, t | y, s) * (-a(t)/2 - (b - y - A(s, t)) / (2 (t - s)))

makes ``Psi(b, t | b, s)`` vanish as ``s -> t``, where ``A(s, t) = H~(s, t)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics
from .diffusion import DiffusionParams, InitialLaw, log_drift_H, map_log_blocks
from .errors import DomainError, NumericalError, ValidationError
from .growth import evaluate_modified, growth_rate_modified

MIN_MASS = 0.5
KDE_MAX_POINTS = 1 << 15


class BoundaryUnreachable(NumericalError):
    pass


@dataclass(frozen=True)
class FptDensity:
    grid: np.ndarray
    density: np.ndarray
    mass_captured: float
    method: str = ""

    @property
    def mass(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    def at(self, t) -> np.ndarray:
        return np.interp(t, self.grid, self.density, left=0.0, right=0.0)


@dataclass(frozen=True)
class FptSummary:
    mean: float
    mode: float
    std_dev: float
    deciles: tuple[float, float, float]
    mass_captured: float

    def to_dict(self) -> dict:
        return {"mean": self.mean, "mode": self.mode, "std_dev": self.std_dev,
                "deciles": {"d1": self.deciles[0], "d5": self.deciles[1], "d9": self.deciles[2]},
                "mass_captured": self.mass_captured}


def _check_boundary(params: DiffusionParams, start_value: float, boundary: float):
    if not (math.isfinite(boundary) and boundary > 0):
        raise ValidationError("boundary must be positive")
    if boundary <= start_value:
        raise DomainError("boundary must lie above the initial value")


def _first_crossings(logs: np.ndarray, grid: np.ndarray, log_b: float) -> np.ndarray:
    """First up-crossing of log_b along each row, linearly interpolated; nan if none."""
    above = logs >= log_b
    hit = above.any(axis=1)
    j = np.argmax(above, axis=1)
    out = np.full(logs.shape[0], np.nan)
    at_start = hit & (j == 0)
    out[at_start] = grid[0]
    inner = hit & (j > 0)
    rows = np.nonzero(inner)[0]
    jj = j[rows]
    lo, hi = logs[rows, jj - 1], logs[rows, jj]
    frac = (log_b - lo) / (hi - lo)
    out[rows] = grid[jj - 1] + frac * (grid[jj] - grid[jj - 1])
    return out


def _kde(samples: np.ndarray, weight: float, lo_lim: float, hi_lim: float) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian KDE (Silverman bandwidth) by linear binning and direct convolution."""
    n = samples.size
    sd = float(np.std(samples, ddof=1)) if n > 1 else 0.0
    iqr = float(np.subtract(*np.percentile(samples, [75, 25])))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    bw = 0.9 * spread * n ** (-0.2)
    bw = max(bw, 1e-9 * max(1.0, abs(float(np.mean(samples)))))
    lo = max(lo_lim, float(samples.min()) - 5 * bw)
    hi = min(hi_lim, float(samples.max()) + 5 * bw)
    if hi <= lo:
        hi = lo + 10 * bw
    n_grid = int(min(KDE_MAX_POINTS, max(512, math.ceil((hi - lo) / (bw / 4)) + 1)))
    grid = np.linspace(lo, hi, n_grid)
    step = grid[1] - grid[0]
    pos = np.clip((samples - lo) / step, 0, n_grid - 1 - 1e-12)
    left = np.floor(pos).astype(np.int64)
    frac = pos - left
    counts = np.bincount(left, 1 - frac, minlength=n_grid) + np.bincount(
        np.minimum(left + 1, n_grid - 1), frac, minlength=n_grid)
    half = int(math.ceil(5 * bw / step))
    offs = np.arange(-half, half + 1) * step
    kernel = np.exp(-0.5 * (offs / bw) ** 2) / (bw * math.sqrt(2 * math.pi))
    dens = np.convolve(counts, kernel)[half:half + n_grid]
    return grid, dens * (weight / n)


def fpt_crossing_times(params: DiffusionParams, init: InitialLaw, boundary: float, horizon: float,
                       n_paths: int, dt: float, seed: int) -> np.ndarray:
    """Crossing time per simulated path (nan when the path stays below by the horizon)."""
    t0 = params.richards.t0
    _check_boundary(params, math.exp(init.mu0), boundary)
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if not horizon > t0:
        raise ValidationError("horizon must exceed t0")
    n_steps = max(1, int(math.ceil((horizon - t0) / dt - 1e-9)))
    grid = np.linspace(t0, horizon, n_steps + 1)
    log_b = math.log(boundary)
    return np.concatenate(map_log_blocks(params, init, grid, n_paths, seed,
                                         lambda logs: _first_crossings(logs, grid, log_b)))


def fpt_monte_carlo(params: DiffusionParams, init: InitialLaw, boundary: float, horizon: float,
                    n_paths: int = 100_000, dt: float = 0.01, seed: int = 0) -> FptDensity:
    times = fpt_crossing_times(params, init, boundary, horizon, n_paths, dt, seed)
    crossed = times[np.isfinite(times)]
    mass = crossed.size / times.size
    if mass < MIN_MASS:
        raise BoundaryUnreachable(
            f"boundary rarely reached (captured mass {mass:.3g}); extend horizon")
    grid, dens = _kde(crossed, mass, params.richards.t0, horizon)
    return FptDensity(grid, dens, mass, "monte_carlo")


def deterministic_crossing(params: DiffusionParams, boundary: float, horizon: float) -> float:
    """First time the mean curve reaches ``boundary``; inf if it does not by the horizon."""
    r, c = params.richards, params.perturbation
    f = lambda t: evaluate_modified(r, c, t) - boundary
    if f(r.t0) >= 0:
        return r.t0
    if f(horizon) < 0:
        return math.inf
    grid = np.linspace(r.t0, horizon, 257)
    vals = np.asarray(evaluate_modified(r, c, grid)) - boundary
    j = int(np.argmax(vals >= 0))
    return numerics.find_root(f, (grid[j - 1], grid[j]))


def _solve_window(params: DiffusionParams, y0: float, log_b: float, t0: float, nodes: np.ndarray) -> np.ndarray:
    """Trapezoid recurrence for the Volterra equation on ``nodes`` (g = 0 before nodes[0])."""
    sig2 = params.sigma ** 2
    a = np.asarray(growth_rate_modified(params.richards, params.perturbation, nodes)) - 0.5 * sig2
    A0 = np.asarray(log_drift_H(params, np.full(nodes.shape, t0), nodes))
    # H~(t_i, t_j) = H~(t0, t_j) - H~(t0, t_i) by additivity
    n = nodes.size
    g = np.zeros(n)
    h = nodes[1] - nodes[0]

    def psi(b_minus_y, A, lag, a_t):
        var = sig2 * lag
        z = b_minus_y - A
        f = np.exp(-z * z / (2 * var)) / np.sqrt(2 * math.pi * var)
        return f * (-0.5 * a_t - z / (2 * lag))

    for j in range(n):
        lag0 = nodes[j] - t0
        if lag0 <= 0:
            continue
        src = -2.0 * psi(log_b - y0, A0[j], lag0, a[j])
        if j > 0:
            i = np.arange(j)
            lag = nodes[j] - nodes[i]
            w = np.full(j, h)
            w[0] = h / 2
            src += 2.0 * np.sum(w * g[i] * psi(0.0, A0[j] - A0[i], lag, a[j]))
        g[j] = src
    return g


def fpt_integral_equation(params: DiffusionParams, x0: float, boundary: float, horizon: float,
                          n_nodes: int = 1000, tol: float = 1e-3, max_doublings: int = 4) -> FptDensity:
    """Volterra (second kind) FPT density on a window around the deterministic crossing.

    The window spans ten linearised standard deviations of the crossing time on
    each side (the whole horizon when the mean curve never reaches the boundary).
    The node count is doubled until the sup-norm change is below ``tol`` times
    the peak density.
    """
    r = params.richards
    t0 = r.t0
    _check_boundary(params, x0, boundary)
    if not horizon > t0:
        raise ValidationError("horizon must exceed t0")
    if n_nodes < 10:
        raise ValidationError("n_nodes must be >= 10")
    t_det = deterministic_crossing(params, boundary, horizon)
    lo, hi = t0, horizon
    if math.isfinite(t_det) and t_det > t0:
        slope = float(growth_rate_modified(r, params.perturbation, t_det))
        sd_t = params.sigma * math.sqrt(t_det - t0) / max(slope, 1e-12)
        lo, hi = max(t0, t_det - 10 * sd_t), min(horizon, t_det + 10 * sd_t)
    y0, log_b = math.log(x0), math.log(boundary)
    prev = None
    n = n_nodes
    for _ in range(max_doublings + 1):
        nodes = np.linspace(lo, hi, n)
        g = np.clip(_solve_window(params, y0, log_b, t0, nodes), 0.0, None)
        if prev is not None:
            change = np.max(np.abs(g[::2] - prev))
            if change <= tol * max(g.max(), 1e-300):
                mass = float(np.trapezoid(g, nodes))
                return FptDensity(nodes, g, min(mass, 1.0), "integral_equation")
        prev = g
        n = 2 * n - 1
    raise NumericalError("FPT integral equation did not converge under grid refinement")


def fpt_summary(density: FptDensity) -> FptSummary:
    t, f = np.asarray(density.grid), np.clip(np.asarray(density.density), 0.0, None)
    total = float(np.trapezoid(f, t))
    if not total > 0:
        raise NumericalError("density has no mass")
    p = f / total
    mean = float(np.trapezoid(t * p, t))
    var = float(np.trapezoid((t - mean) ** 2 * p, t))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(t))])
    cdf /= cdf[-1]
    deciles = tuple(float(np.interp(q, cdf, t)) for q in (0.1, 0.5, 0.9))
    j = int(np.argmax(f))
    mode = float(t[j])
    if 0 < j < t.size - 1:
        y0, y1, y2 = f[j - 1], f[j], f[j + 1]
        den = y0 - 2 * y1 + y2
        if den < 0:
            mode += 0.5 * (y0 - y2) / den * (t[j + 1] - t[j])
    return FptSummary(mean, float(mode), math.sqrt(max(var, 0.0)), deciles, float(min(density.mass_captured, 1.0)))


def density_sup_gap(a: FptDensity, b: FptDensity) -> float:
    """sup |a - b| over the union of both grids, relative to the larger peak."""
    t = np.union1d(a.grid, b.grid)
    gap = np.max(np.abs(a.at(t) - b.at(t)))
    return float(gap / max(a.density.max(), b.density.max()))
