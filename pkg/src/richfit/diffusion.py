"""Lognormal diffusions whose means follow the classical or perturbed Richards curve.

The process solves ``dX = h~(t) X dt + sigma X dW``.  Its log-increment over
``[s, t]`` is Gaussian with mean ``H~(s, t)`` and variance ``sigma^2 (t - s)``,
where

    H~(s, t) = q log((k^s + eta)/(k^t + eta)) - sigma^2 (t - s)/2
               + int_{max(s,t*)}^{max(t,t*)} C(u) w(u) du.

Simulation uses this exact transition law, so there is no discretisation bias.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics
from .errors import DomainError, ValidationError
from .growth import Perturbation, RichardsParams, cumulative_perturbation_integral

PATH_BLOCK = 256


@dataclass(frozen=True)
class DiffusionParams:
    richards: RichardsParams
    sigma: float
    perturbation: Perturbation = field(default_factory=Perturbation.none)

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValidationError(f"sigma must be positive, got {self.sigma}")

    @property
    def xi(self) -> tuple[float, float, float, float]:
        r = self.richards
        return (r.q, r.k, r.eta, self.sigma)

    def classical(self) -> "DiffusionParams":
        return DiffusionParams(self.richards, self.sigma)


@dataclass(frozen=True)
class InitialLaw:
    """Law of X(t0): lognormal(mu0, sigma0_sq); sigma0_sq == 0 is a point mass at exp(mu0)."""

    mu0: float
    sigma0_sq: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.mu0):
            raise ValidationError("mu0 must be finite")
        if not (math.isfinite(self.sigma0_sq) and self.sigma0_sq >= 0):
            raise ValidationError("sigma0_sq must be finite and nonnegative")

    @classmethod
    def degenerate(cls, x0: float) -> "InitialLaw":
        if not x0 > 0:
            raise ValidationError("x0 must be positive")
        return cls(math.log(x0), 0.0)

    @classmethod
    def lognormal(cls, mu0: float, sigma0_sq: float) -> "InitialLaw":
        return cls(mu0, sigma0_sq)

    @property
    def is_degenerate(self) -> bool:
        return self.sigma0_sq == 0.0

    @property
    def mean(self) -> float:
        return math.exp(self.mu0 + 0.5 * self.sigma0_sq)


@dataclass(frozen=True)
class SamplePaths:
    """``d`` discretely observed trajectories, each on its own time grid."""

    times: tuple
    values: tuple

    def __post_init__(self):
        times = tuple(np.asarray(t, dtype=float) for t in self.times)
        values = tuple(np.asarray(v, dtype=float) for v in self.values)
        if not times or len(times) != len(values):
            raise ValidationError("need at least one path and matching times/values")
        for i, (t, v) in enumerate(zip(times, values)):
            if t.ndim != 1 or t.shape != v.shape or t.size == 0:
                raise ValidationError(f"path {i}: times and values must be equal-length 1-d arrays")
            if np.any(np.diff(t) <= 0):
                raise ValidationError(f"path {i}: times must be strictly increasing")
            if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
                raise ValidationError(f"path {i}: non-finite entries")
            if np.any(v < 0):
                raise ValidationError(f"path {i}: negative values")
        t0 = times[0][0]
        if any(t[0] != t0 for t in times):
            raise ValidationError("all paths must share the first observation time")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_grid(cls, grid: Sequence[float], matrix) -> "SamplePaths":
        grid = np.asarray(grid, dtype=float)
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(tuple(grid for _ in range(matrix.shape[0])), tuple(row for row in matrix))

    @property
    def d(self) -> int:
        return len(self.times)

    @property
    def t0(self) -> float:
        return float(self.times[0][0])

    @property
    def counts(self) -> list[int]:
        return [t.size for t in self.times]

    @property
    def common_grid(self) -> bool:
        first = self.times[0]
        return all(t.shape == first.shape and np.array_equal(t, first) for t in self.times)

    def grid(self) -> np.ndarray:
        if not self.common_grid:
            raise ValidationError("paths do not share a common time grid")
        return self.times[0]

    def matrix(self) -> np.ndarray:
        self.grid()
        return np.vstack(self.values)

    def sample_mean(self) -> tuple[np.ndarray, np.ndarray]:
        return self.grid(), self.matrix().mean(axis=0)

    def restrict(self, t_max: float) -> "SamplePaths":
        """Keep observations with time <= t_max."""
        keep = [t <= t_max for t in self.times]
        return SamplePaths(tuple(t[m] for t, m in zip(self.times, keep)),
                           tuple(v[m] for v, m in zip(self.values, keep)))

    def subsample(self, every: int) -> "SamplePaths":
        if every < 1:
            raise ValidationError("subsample step must be >= 1")
        return SamplePaths(tuple(t[::every] for t in self.times), tuple(v[::every] for v in self.values))


@dataclass(frozen=True)
class MomentSpec:
    """Selector vector (lambda1..lambda4) of the closed-form moment functional.

    Rows: n-th moment ``(n, n^2/2, c, 1)``, mode ``(1, -1, c, 1)`` and
    percentile ``(1, z_alpha, c, 1/2)`` with ``c = 0`` for conditional and
    ``c = 1`` for unconditional quantities.
    """

    lambdas: tuple[float, float, float, float]
    conditional: bool = False

    def __post_init__(self):
        l1, l2, l3, l4 = self.lambdas
        if l3 != (0.0 if self.conditional else 1.0):
            raise ValidationError("lambda3 must be 0 (conditional) or 1 (unconditional)")
        is_moment = l4 == 1.0 and l1 > 0 and l2 == l1 * l1 / 2.0
        is_mode = (l1, l2, l4) == (1.0, -1.0, 1.0)
        is_pct = l1 == 1.0 and l4 == 0.5 and math.isfinite(l2)
        if not (is_moment or is_mode or is_pct):
            raise ValidationError(f"lambda vector {self.lambdas} matches no known characteristic")

    @classmethod
    def mean(cls, n: float = 1.0, conditional: bool = False) -> "MomentSpec":
        return cls((float(n), n * n / 2.0, 0.0 if conditional else 1.0, 1.0), conditional)

    @classmethod
    def mode(cls, conditional: bool = False) -> "MomentSpec":
        return cls((1.0, -1.0, 0.0 if conditional else 1.0, 1.0), conditional)

    @classmethod
    def percentile(cls, z_alpha: float, conditional: bool = False) -> "MomentSpec":
        return cls((1.0, float(z_alpha), 0.0 if conditional else 1.0, 0.5), conditional)

    @classmethod
    def percentile_alpha(cls, alpha: float, conditional: bool = False) -> "MomentSpec":
        if not 0 < alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        return cls.percentile(float(numerics.norm_ppf(alpha)), conditional)


def _pert_between(params: DiffusionParams, s, t):
    """Vectorised int_{max(s,t*)}^{max(t,t*)} C w over pairs (s_j, t_j)."""
    c = params.perturbation
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if c.is_none:
        return np.zeros(np.broadcast(s, t).shape)
    s_b, t_b = np.broadcast_arrays(s, t)
    nodes = np.unique(np.concatenate([s_b.ravel(), t_b.ravel()]))
    cum = cumulative_perturbation_integral(c, params.richards, nodes)
    return np.interp(t_b, nodes, cum) - np.interp(s_b, nodes, cum)


def log_drift_H(params: DiffusionParams, s, t):
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < s_arr):
        raise DomainError("log_drift_H requires t >= s")
    r = params.richards
    out = (r.q * np.log((r.kpow(s_arr) + r.eta) / (r.kpow(t_arr) + r.eta))
           - 0.5 * params.sigma ** 2 * (t_arr - s_arr)
           + _pert_between(params, s_arr, t_arr))
    return float(out) if np.ndim(out) == 0 else out


def transition_law(params: DiffusionParams, x: float, s: float, t: float) -> tuple[float, float]:
    """Location and squared scale of log X(t) given X(s) = x."""
    if not x > 0:
        raise DomainError("x must be positive")
    if not t > s:
        raise DomainError("transition_law requires t > s")
    return math.log(x) + log_drift_H(params, s, t), params.sigma ** 2 * (t - s)


def transition_density(params: DiffusionParams, y, x: float, s: float, t: float):
    """Density of X(t) at ``y`` given X(s) = x."""
    loc, var = transition_law(params, x, s, t)
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        ly = np.log(y)
    out = np.exp(-(ly - loc) ** 2 / (2 * var)) / (y * math.sqrt(2 * math.pi * var))
    return float(out) if out.ndim == 0 else out


def moment(params: DiffusionParams, init: InitialLaw, spec: MomentSpec, t, given=None):
    l1, l2, l3, l4 = spec.lambdas
    if spec.conditional:
        if given is None:
            raise ValidationError("conditional characteristic needs given=(y, s)")
        y, tau = given
        if not y > 0:
            raise DomainError("conditioning value must be positive")
        base = math.log(y)
    else:
        tau = params.richards.t0
        base = init.mu0
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < tau):
        raise DomainError("t must not precede the conditioning time")
    var = l3 * init.sigma0_sq + params.sigma ** 2 * (t_arr - tau)
    out = np.exp((base + log_drift_H(params, tau, t_arr)) * l1 + l2 * var ** l4)
    return float(out) if out.ndim == 0 else out


def mean_variance_ratio(params_mod: DiffusionParams, t) -> tuple:
    """Mean and variance of the perturbed process relative to the classical one."""
    if params_mod.perturbation.is_none:
        raise ValidationError("mean_variance_ratio needs a perturbed process")
    r = params_mod.richards
    ts = params_mod.perturbation.t_star
    integ = _pert_between(params_mod, np.full(np.shape(t), min(r.t0, ts)), t)
    mean_ratio = np.exp(integ)
    out = (mean_ratio, mean_ratio ** 2)
    if np.ndim(t) == 0:
        return float(out[0]), float(out[1])
    return out


def fdd_log_covariance(params: DiffusionParams, init: InitialLaw, times) -> np.ndarray:
    ts = np.asarray(times, dtype=float)
    if ts.ndim != 1 or np.any(np.diff(ts) <= 0):
        raise ValidationError("times must be strictly increasing")
    if np.any(ts < params.richards.t0):
        raise DomainError("times must not precede t0")
    return init.sigma0_sq + params.sigma ** 2 * (np.minimum.outer(ts, ts) - params.richards.t0)


def fdd_log_mean(params: DiffusionParams, init: InitialLaw, times) -> np.ndarray:
    ts = np.asarray(times, dtype=float)
    return init.mu0 + np.asarray(log_drift_H(params, np.full(ts.shape, params.richards.t0), ts))


def _block_ranges(n_paths: int, block: int = PATH_BLOCK) -> list[tuple[int, int, int]]:
    return [(b, lo, min(lo + block, n_paths)) for b, lo in enumerate(range(0, n_paths, block))]


def map_log_blocks(params: DiffusionParams, init: InitialLaw, grid, n_paths: int, seed: int, fn) -> list:
    """Apply ``fn`` to each block of simulated log-paths on ``grid``.

    Paths are generated in fixed blocks of ``PATH_BLOCK``; block ``b`` draws from
    stream ``b``, so output does not depend on how blocks are scheduled.  Each
    block is a matrix (block size, len(grid)) of log X by exact transition sampling.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be strictly increasing")
    t0 = params.richards.t0
    if grid[0] < t0:
        raise DomainError("grid must start at or after t0")
    if n_paths < 1:
        raise ValidationError("n_paths must be >= 1")
    nodes = np.concatenate([[t0], grid]) if grid[0] > t0 else grid
    steps = np.diff(nodes)
    drift = np.asarray(log_drift_H(params, nodes[:-1], nodes[1:]))
    scale = params.sigma * np.sqrt(steps)
    sd0 = math.sqrt(init.sigma0_sq)

    def run(block):
        b, lo, hi = block
        rng = numerics.rng_stream(seed, b)
        m = hi - lo
        start = np.full(m, init.mu0)
        if sd0 > 0:
            start = start + sd0 * rng.standard_normal(m)
        z = rng.standard_normal((m, steps.size))
        logs = np.empty((m, nodes.size))
        logs[:, 0] = start
        np.cumsum(drift + scale * z, axis=1, out=logs[:, 1:])
        logs[:, 1:] += start[:, None]
        return fn(logs[:, -grid.size:])

    return numerics.parallel_map(run, _block_ranges(n_paths))


def simulate_log_paths(params: DiffusionParams, init: InitialLaw, grid, n_paths: int, seed: int) -> np.ndarray:
    """Matrix (n_paths, len(grid)) of log X on ``grid``."""
    return np.vstack(map_log_blocks(params, init, grid, n_paths, seed, lambda block: block))


def simulate_paths(params: DiffusionParams, init: InitialLaw, grid, n_paths: int, seed: int) -> SamplePaths:
    grid = np.asarray(grid, dtype=float)
    return SamplePaths.from_grid(grid, np.exp(simulate_log_paths(params, init, grid, n_paths, seed)))
