"""Linear birth-death and pure-birth processes with Richards-type conditional mean.

Birth rate per individual is lambda(1 - rho(t)) with

    1 - rho(t) = (mu + h~(t)) / lambda,    lambda - mu = -q log k,

so the conditional mean is y / psi(t), with psi(t) = exp(-int_0^t h~).  Time is
measured from the initial observation: configurations must have t0 = 0.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from . import numerics
from .diffusion import SamplePaths
from .errors import DomainError, NumericalError, ValidationError
from .growth import (Perturbation, RichardsParams, cumulative_perturbation_integral,
                     growth_rate_modified, perturbation_integral, tail_horizon)

EXPLOSION_LIMIT = 10 ** 9
SIM_BLOCK = 4096
RHO_GRID = 1000


@dataclass(frozen=True)
class PsiPhi:
    psi: float
    phi: float


@dataclass(frozen=True)
class BdConfig:
    params: RichardsParams
    perturbation: Perturbation = field(default_factory=Perturbation.none)
    mu_rate: float = 0.0
    y0: int = 1
    lambda_rate: float | None = None

    def __post_init__(self):
        if self.params.t0 != 0.0:
            raise ValidationError("birth-death configurations use t0 = 0; shift time first")
        if not (math.isfinite(self.mu_rate) and self.mu_rate >= 0):
            raise ValidationError("mu_rate must be nonnegative")
        if int(self.y0) != self.y0 or self.y0 < 1:
            raise ValidationError("y0 must be a positive integer")
        object.__setattr__(self, "y0", int(self.y0))
        lam = self.mu_rate - self.params.q * self.params.log_k
        if self.lambda_rate is not None and abs(self.lambda_rate - lam) > 1e-12 * max(1.0, lam):
            raise ValidationError(f"lambda - mu must equal -q log k = {lam - self.mu_rate!r}")
        object.__setattr__(self, "lambda_rate", lam)
        rho = self.rho(self._check_grid())
        if np.any(rho < -1e-12) or np.any(rho > 1 + 1e-12):
            raise ValidationError("rho(t) leaves [0, 1]; birth probability would be invalid")

    @classmethod
    def pure_birth(cls, params: RichardsParams, perturbation: Perturbation | None = None, y0: int = 1):
        return cls(params, perturbation or Perturbation.none(), 0.0, y0)

    @property
    def is_pure_birth(self) -> bool:
        return self.mu_rate == 0.0

    def _check_grid(self) -> np.ndarray:
        c = self.perturbation
        end = math.log(1e-12 * self.params.eta) / self.params.log_k
        if not c.is_none:
            end = max(end, tail_horizon(c, self.params))
        pts = [np.linspace(0.0, end, RHO_GRID)]
        if not c.is_none:
            pts.append(c.knot_times() if c.kind == "tabulated" else [c.t_star])
        return np.unique(np.concatenate(pts))

    def h_tilde(self, t):
        return growth_rate_modified(self.params, self.perturbation, t)

    def rho(self, t):
        return 1.0 - (self.mu_rate + np.asarray(self.h_tilde(t))) / self.lambda_rate


def _check_time(t: float):
    if not (math.isfinite(t) and t >= 0):
        raise DomainError("t must be finite and nonnegative")


def _log_psi(cfg: BdConfig, t):
    """log psi on an array of times (vectorised through a sorted cumulative integral)."""
    p = cfg.params
    t_arr = np.asarray(t, dtype=float)
    base = p.q * np.log((p.eta + p.kpow(t_arr)) / (p.eta + 1.0))
    if cfg.perturbation.is_none:
        return base
    flat = t_arr.ravel()
    order = np.argsort(flat, kind="stable")
    integ = np.empty_like(flat)
    integ[order] = cumulative_perturbation_integral(cfg.perturbation, p, flat[order])
    return base - integ.reshape(t_arr.shape)


def psi(cfg: BdConfig, t):
    out = np.exp(_log_psi(cfg, t))
    return float(out) if out.ndim == 0 else out


@functools.lru_cache(maxsize=4096)
def _psi_integral(cfg: BdConfig, t: float) -> float:
    """int_0^t psi(s) ds with breakpoints at the perturbation knots."""
    c = cfg.perturbation
    p = cfg.params
    if c.is_none or t <= c.t_star:
        return numerics.integrate(lambda s: psi(cfg, s), 0.0, t)
    head = numerics.integrate(lambda s: psi(cfg, s), 0.0, c.t_star)
    knots = [c.t_star]
    if c.kind == "tabulated":
        knots += [u for u in c.knot_times()[1:] if u < t]
    knots.append(t)
    base = lambda s: ((p.eta + p.kpow(s)) / (p.eta + 1.0)) ** p.q
    tail, acc = 0.0, 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        # acc carries int_{t*}^a C w so the inner integral only spans [a, s]
        tail += numerics.integrate(
            lambda s, a=a, acc=acc: base(s) * math.exp(-acc - perturbation_integral(c, p, a, s)), a, b)
        acc += perturbation_integral(c, p, a, b)
    return head + tail


def psi_phi(cfg: BdConfig, t: float) -> PsiPhi:
    """psi and phi, with phi = 1 - psi + mu int_0^t psi."""
    _check_time(t)
    ps = psi(cfg, t)
    phi = 1.0 - ps
    if cfg.mu_rate > 0 and t > 0:
        phi += cfg.mu_rate * _psi_integral(cfg, float(t))
    return PsiPhi(ps, max(phi, 0.0))


def bd_transition_probs(cfg: BdConfig, xs, t: float) -> np.ndarray:
    """P[X(t) = x | X(0) = y] for an array of states."""
    xs = np.asarray(xs)
    if np.any(xs < 0) or np.any(xs != np.round(xs)):
        raise DomainError("states must be nonnegative integers")
    xs = xs.astype(np.int64)
    y = cfg.y0
    _check_time(t)
    if t == 0:
        return (xs == y).astype(float)
    pp = psi_phi(cfg, t)
    s = pp.psi + pp.phi
    if s < 1 - 1e-12:
        raise DomainError("psi + phi < 1: configuration is inconsistent")
    s = max(s, 1.0)
    log_b = math.log1p(-1.0 / s) if s > 1 else -math.inf
    out = np.empty(xs.shape, dtype=float)
    flat_x, flat_out = xs.ravel(), out.reshape(-1)
    if pp.phi <= 0:
        return (xs == y).astype(float)
    log_a = math.log(pp.phi / s)
    c = 1.0 / pp.phi - 1.0
    log_c = math.log(abs(c)) if c != 0 else -math.inf
    for j, x in enumerate(flat_x):
        if x == 0:
            flat_out[j] = math.exp(y * log_b) if log_b > -math.inf else 0.0
            continue
        i = np.arange(min(x, y) + 1)
        log_terms = (gammaln(y + 1) - gammaln(i + 1) - gammaln(y - i + 1)
                     + gammaln(y + x - i) - gammaln(y) - gammaln(x - i + 1))
        with np.errstate(invalid="ignore"):
            log_terms = log_terms + np.where(i > 0, i * log_c, 0.0) + np.where(y - i > 0, (y - i) * log_b, 0.0)
        signs = np.where((c < 0) & (i % 2 == 1), -1.0, 1.0)
        finite = np.isfinite(log_terms)
        if not finite.any():
            flat_out[j] = 0.0
            continue
        lse, sign = logsumexp(log_terms[finite], b=signs[finite], return_sign=True)
        val = sign * math.exp(x * log_a + lse)
        flat_out[j] = min(max(val, 0.0), 1.0)
    return out


def bd_transition_prob(cfg: BdConfig, x: int, t: float) -> float:
    return float(bd_transition_probs(cfg, np.array([x]), t)[0])


def bd_mean_variance(cfg: BdConfig, t: float) -> tuple[float, float]:
    pp = psi_phi(cfg, t)
    y = cfg.y0
    return y / pp.psi, max(y * (pp.psi + 2 * pp.phi - 1) / pp.psi ** 2, 0.0)


def extinction_probability(cfg: BdConfig) -> float:
    # psi stays bounded while phi diverges linearly when mu > 0
    return 1.0 if cfg.mu_rate > 0 else 0.0


def bd_pgf(cfg: BdConfig, z: float, t: float) -> float:
    if not 0 < z < 1:
        raise DomainError("z must lie in (0, 1)")
    pp = psi_phi(cfg, t)
    return (1.0 - (z - 1.0) / ((z - 1.0) * pp.phi - pp.psi)) ** cfg.y0


def _require_pure_birth(cfg: BdConfig):
    if not cfg.is_pure_birth:
        raise ValidationError("operation defined for the pure-birth process (mu = 0) only")


def birth_intensity(cfg: BdConfig, t):
    """Lambda(t) = int_0^t lambda (1 - rho) = -log psi(t)."""
    _require_pure_birth(cfg)
    if np.any(np.asarray(t) < 0):
        raise DomainError("t must be nonnegative")
    out = -_log_psi(cfg, t)
    return float(out) if np.ndim(out) == 0 else out


def birth_transition_probs(cfg: BdConfig, xs, t: float) -> np.ndarray:
    """Negative-binomial law of the pure-birth process."""
    _require_pure_birth(cfg)
    _check_time(t)
    xs = np.asarray(xs)
    if np.any(xs != np.round(xs)):
        raise DomainError("states must be integers")
    xs = xs.astype(np.int64)
    y = cfg.y0
    lam = birth_intensity(cfg, t)
    if lam == 0:
        return (xs == y).astype(float)
    out = np.zeros(xs.shape)
    ok = xs >= y
    xv = xs[ok]
    log_p = (gammaln(xv) - gammaln(y) - gammaln(xv - y + 1) - y * lam
             + (xv - y) * math.log(-math.expm1(-lam)))
    out[ok] = np.exp(log_p)
    return out


def birth_transition_prob(cfg: BdConfig, x: int, t: float) -> float:
    if x < cfg.y0:
        raise DomainError("pure-birth states satisfy x >= y")
    return float(birth_transition_probs(cfg, np.array([x]), t)[0])


def dispersion_indices(cfg: BdConfig, t) -> tuple:
    """Fano factor D = 1/psi - 1 and coefficient of variation sqrt((1 - psi)/y)."""
    _require_pure_birth(cfg)
    ps = np.asarray(psi(cfg, t))
    fano = 1.0 / ps - 1.0
    cv = np.sqrt(np.maximum(1.0 - ps, 0.0) / cfg.y0)
    if fano.ndim == 0:
        return float(fano), float(cv)
    return fano, cv


def limiting_psi(cfg: BdConfig) -> float:
    p, c = cfg.params, cfg.perturbation
    base = (p.eta / (p.eta + 1.0)) ** p.q
    if c.is_none:
        return base
    return base * math.exp(-perturbation_integral(c, p, c.t_star, tail_horizon(c, p)))


def fano_crossing_time(cfg: BdConfig) -> float | None:
    """Time where psi = 1/2, i.e. D = 1; None when psi never falls to 1/2."""
    if limiting_psi(cfg) >= 0.5:
        return None
    hi = 1.0
    while psi(cfg, hi) > 0.5:
        hi *= 2.0
    return numerics.find_root(lambda s: psi(cfg, s) - 0.5, (0.0, hi))


def _scatter_ranges(out, rows, lo, hi, vals):
    """out[r, lo_r:hi_r] = val_r for every row with hi_r > lo_r."""
    n = hi - lo
    keep = n > 0
    if not keep.any():
        return
    rows, lo, n, vals = rows[keep], lo[keep], n[keep], vals[keep]
    rep = np.repeat(np.arange(rows.size), n)
    offs = np.arange(rep.size) - np.repeat(np.cumsum(n) - n, n)
    out[rows[rep], lo[rep] + offs] = vals[rep]


def _simulate_block(cfg: BdConfig, grid: np.ndarray, m: int, rng) -> np.ndarray:
    lam, mu = cfg.lambda_rate, cfg.mu_rate
    total = lam + mu
    out = np.empty((m, grid.size), dtype=np.int64)
    state = np.full(m, cfg.y0, dtype=np.int64)
    now = np.zeros(m)
    gi = np.zeros(m, dtype=np.int64)
    active = np.arange(m)
    while active.size:
        n = state[active]
        t_new = now[active] + rng.exponential(1.0, active.size) / (n * total)
        u = rng.random(active.size)
        # state holds on [now, t_new): record grid points passed
        gi_new = np.searchsorted(grid, t_new, side="left")
        _scatter_ranges(out, active, gi[active], gi_new, n)
        gi[active] = gi_new
        now[active] = t_new
        live = gi_new < grid.size
        death = u < mu / total
        accept_birth = ~death & (u - mu / total < (lam / total) * (1.0 - cfg.rho(np.minimum(t_new, grid[-1]))))
        step = np.where(death, -1, np.where(accept_birth, 1, 0))
        state[active] = n + np.where(live, step, 0)
        if state.max(initial=0) > EXPLOSION_LIMIT:
            raise NumericalError("birth-death path exceeded the explosion guard")
        extinct = live & (state[active] == 0)
        if extinct.any():
            rows = active[extinct]
            _scatter_ranges(out, rows, gi[rows], np.full(rows.size, grid.size), np.zeros(rows.size, np.int64))
        active = active[live & ~extinct]
    return out


def simulate_bd_paths(cfg: BdConfig, horizon: float, n_paths: int, seed: int, grid=None) -> SamplePaths:
    """Exact event simulation by thinning, recorded on ``grid`` (default 101 points on [0, horizon])."""
    if not (math.isfinite(horizon) and horizon > 0):
        raise ValidationError("horizon must be positive")
    if n_paths < 1:
        raise ValidationError("n_paths must be >= 1")
    grid = np.linspace(0.0, horizon, 101) if grid is None else np.asarray(grid, dtype=float)
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0) or grid[-1] > horizon:
        raise ValidationError("grid must start at 0, increase strictly and end by the horizon")
    blocks = [(b, lo, min(lo + SIM_BLOCK, n_paths)) for b, lo in enumerate(range(0, n_paths, SIM_BLOCK))]

    def run(block):
        b, lo, hi = block
        return _simulate_block(cfg, grid, hi - lo, numerics.rng_stream(seed, b))

    mat = np.vstack(numerics.parallel_map(run, blocks))
    return SamplePaths.from_grid(grid, mat.astype(float))
