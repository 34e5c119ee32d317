"""Maximum likelihood fitting of the perturbed lognormal diffusion and estimation of C(t).

The estimation runs in three steps: fit (q, k, eta, sigma) on data before the
switch, estimate the switch time t*, then recover C(t) from the log-ratio of
the sample mean to the fitted classical mean.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .diffusion import DiffusionParams, InitialLaw, SamplePaths, log_drift_H
from .errors import DomainError, ValidationError
from .fpt import FptSummary, fpt_monte_carlo, fpt_summary
from .growth import (Perturbation, RichardsParams, evaluate_modified, evaluate_richards, kernel,
                     switch_time)
from .optimize import Box, OptBudget, replicate_runs

SIGMA_INTERVAL = (1e-5, 0.1)
Q_BRACKET = (1e-6, 50.0)
MIN_INCREMENTS = 10


@dataclass(frozen=True)
class VTransform:
    """Scaled log-increments ``v = log(X_{j+1}/X_j) / sqrt(delta)`` plus first observations.

    Increments sharing the same (t_j, t_{j+1}) pair are grouped so the
    likelihood is evaluated once per distinct interval.
    """

    v0: np.ndarray
    v1: np.ndarray
    deltas: np.ndarray
    t_lo: np.ndarray
    t_hi: np.ndarray
    path_index: np.ndarray
    t0: float
    pair_lo: np.ndarray = field(repr=False, default=None)
    pair_hi: np.ndarray = field(repr=False, default=None)
    pair_count: np.ndarray = field(repr=False, default=None)
    pair_vsum: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return int(self.v1.size)

    @property
    def d(self) -> int:
        return int(self.v0.size)


@dataclass(frozen=True)
class LikelihoodTerms:
    z1: float
    phi_term: float
    gamma_term: float


@dataclass(frozen=True)
class BoundsBox:
    I_q: tuple[float, float]
    I_k: tuple[float, float]
    I_eta: tuple[float, float]
    I_sigma: tuple[float, float] = SIGMA_INTERVAL
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("I_q", "I_k", "I_eta", "I_sigma"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise DomainError(f"{name} is empty or not finite: ({lo}, {hi})")
        if not (0 < self.I_k[0] and self.I_k[1] < 1):
            raise DomainError("I_k must lie inside (0, 1)")

    def to_box(self) -> Box:
        return Box.from_pairs([self.I_q, self.I_k, self.I_eta, self.I_sigma])

    def contains(self, q: float, k: float, eta: float, sigma: float | None = None) -> bool:
        inside = (self.I_q[0] <= q <= self.I_q[1] and self.I_k[0] <= k <= self.I_k[1]
                  and self.I_eta[0] <= eta <= self.I_eta[1])
        if sigma is not None:
            inside = inside and self.I_sigma[0] <= sigma <= self.I_sigma[1]
        return inside

    def widths(self) -> dict:
        return {n: getattr(self, n)[1] - getattr(self, n)[0] for n in ("I_q", "I_k", "I_eta", "I_sigma")}

    def to_dict(self) -> dict:
        return {"I_q": list(self.I_q), "I_k": list(self.I_k), "I_eta": list(self.I_eta),
                "I_sigma": list(self.I_sigma), "provenance": dict(self.provenance)}


@dataclass(frozen=True)
class FptConfig:
    """Settings for the first-passage estimate of t*.

    ``boundary_source`` selects the level ``(1+p) x_I``: ``"observed"`` uses the
    sample-mean spline at the observed inflection, ``"estimated"`` the fitted
    curve at its inflection.
    """

    n_paths: int = 100_000
    dt: float = 0.01
    horizon: float | None = None
    seed: int = 0
    boundary_source: str = "estimated"

    def __post_init__(self):
        if self.boundary_source not in ("observed", "estimated"):
            raise ValidationError("boundary_source must be 'observed' or 'estimated'")
        if self.n_paths < 1 or not self.dt > 0:
            raise ValidationError("FPT settings need n_paths >= 1 and dt > 0")


@dataclass
class FitReport:
    p: float
    mle: DiffusionParams
    init_mle: tuple[float, float]
    bounds: BoundsBox
    window_end: float
    t_star_det: float
    t_star_fpt: FptSummary | None
    c_hat: Perturbation
    rae_mean: float
    replication_trace: list
    candidates: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    observed_inflection: tuple[float, float] = (math.nan, math.nan)

    def to_dict(self) -> dict:
        r = self.mle.richards
        return {
            "p": self.p,
            "mle": {"q": r.q, "k": r.k, "eta": r.eta, "sigma": self.mle.sigma, "t0": r.t0, "x0": r.x0},
            "init_mle": {"mu1": self.init_mle[0], "sigma1_sq": self.init_mle[1]},
            "bounds": self.bounds.to_dict(),
            "window_end": self.window_end,
            "observed_inflection": {"t": self.observed_inflection[0], "x": self.observed_inflection[1]},
            "t_star": {"deterministic": self.t_star_det,
                       "fpt": None if self.t_star_fpt is None else self.t_star_fpt.to_dict()},
            "c_hat": self.c_hat.to_dict(),
            "rae_mean": self.rae_mean,
            "replication_trace": [list(map(float, x)) for x in self.replication_trace],
            "candidates": {str(k): v for k, v in self.candidates.items()},
            "warnings": list(self.warnings),
        }


def v_transform(data: SamplePaths) -> VTransform:
    v0, v1, dl, lo, hi, idx = [], [], [], [], [], []
    for i, (t, x) in enumerate(zip(data.times, data.values)):
        if np.any(x <= 0):
            raise DomainError(f"path {i}: values must be positive for the log transform")
        dt = np.diff(t)
        v0.append(x[0])
        v1.append(np.diff(np.log(x)) / np.sqrt(dt))
        dl.append(dt)
        lo.append(t[:-1])
        hi.append(t[1:])
        idx.append(np.full(dt.size, i))
    cat = lambda parts: np.concatenate(parts) if parts else np.empty(0)
    v1, dl, lo, hi = cat(v1), cat(dl), cat(lo), cat(hi)
    pairs, inverse = np.unique(np.stack([lo, hi], axis=1), axis=0, return_inverse=True) if lo.size else (
        np.empty((0, 2)), np.empty(0, dtype=int))
    inverse = np.asarray(inverse).ravel()
    return VTransform(np.asarray(v0), v1, dl, lo, hi, cat(idx).astype(int), data.t0,
                      pairs[:, 0], pairs[:, 1],
                      np.bincount(inverse, minlength=len(pairs)).astype(float),
                      np.bincount(inverse, weights=v1, minlength=len(pairs)))


def inverse_v_transform(vt: VTransform) -> list[np.ndarray]:
    """Recover each path's values from (v0, v1, deltas)."""
    out = []
    for i in range(vt.d):
        m = vt.path_index == i
        logs = np.log(vt.v0[i]) + np.concatenate([[0.0], np.cumsum(vt.v1[m] * np.sqrt(vt.deltas[m]))])
        out.append(np.exp(logs))
    return out


def initial_mles(v0) -> tuple[float, float]:
    lv = np.log(np.asarray(v0, dtype=float))
    if lv.size < 1:
        raise ValidationError("need at least one path")
    if np.ptp(lv) == 0:
        return float(lv[0]), 0.0
    mu = float(lv.mean())
    return mu, float(np.mean((lv - mu) ** 2))


def _classical_drift(vt: VTransform, q: float, k: float, eta: float, sigma: float) -> np.ndarray:
    lk = math.log(k)
    lo, hi = vt.pair_lo, vt.pair_hi
    return q * np.log((np.exp(lo * lk) + eta) / (np.exp(hi * lk) + eta)) - 0.5 * sigma * sigma * (hi - lo)


def likelihood_terms(vt: VTransform, xi: DiffusionParams, c: Perturbation | None = None) -> LikelihoodTerms:
    if c is not None and not c.is_none:
        xi = DiffusionParams(xi.richards, xi.sigma, c)
    if xi.perturbation.is_none:
        r = xi.richards
        m = _classical_drift(vt, r.q, r.k, r.eta, xi.sigma)
    else:
        m = np.asarray(log_drift_H(xi, vt.pair_lo, vt.pair_hi))
    delta = vt.pair_hi - vt.pair_lo
    return LikelihoodTerms(float(np.sum(vt.v1 ** 2)),
                           float(np.sum(vt.pair_count * m * m / delta)),
                           float(np.sum(vt.pair_vsum * m / np.sqrt(delta))))


def log_likelihood_core(vt: VTransform, xi: DiffusionParams, c: Perturbation | None = None) -> float:
    """-(n/2) log sigma^2 - (Z1 + Phi - 2 Gamma) / (2 sigma^2); -inf when not finite."""
    if vt.n == 0:
        return 0.0
    terms = likelihood_terms(vt, xi, c)
    s2 = xi.sigma ** 2
    val = -0.5 * vt.n * math.log(s2) - (terms.z1 + terms.phi_term - 2 * terms.gamma_term) / (2 * s2)
    return val if math.isfinite(val) else -math.inf


def _objective(vt: VTransform):
    z1 = float(np.sum(vt.v1 ** 2))
    delta = vt.pair_hi - vt.pair_lo
    sq = np.sqrt(delta)
    n = vt.n

    def f(x):
        q, k, eta, sigma = x
        if not (q > 0 and 0 < k < 1 and eta > 0 and sigma > 0):
            return -math.inf
        m = _classical_drift(vt, q, k, eta, sigma)
        phi = np.sum(vt.pair_count * m * m / delta)
        gamma = np.sum(vt.pair_vsum * m / sq)
        s2 = sigma * sigma
        return -0.5 * n * math.log(s2) - (z1 + phi - 2 * gamma) / (2 * s2)

    return f


def rae(reference, estimate) -> float:
    ref = np.asarray(reference, dtype=float)
    est = np.asarray(estimate, dtype=float)
    if ref.shape != est.shape or ref.size == 0:
        raise ValidationError("rae needs two nonempty series of equal length")
    if np.any(ref == 0):
        raise DomainError("rae reference contains a zero entry")
    return float(np.mean(np.abs(ref - est) / np.abs(ref)))


def _mean_spline(data: SamplePaths):
    grid, mean = data.sample_mean()
    return grid, mean, numerics.spline_fit(grid, mean)


def _solve_q(ratio: float) -> float:
    """Root of (q/(1+q))^q = ratio on the search bracket."""
    if not 0 < ratio < 1:
        raise DomainError(f"ratio S(t)/K* = {ratio} outside (0, 1)")
    f = lambda q: q * math.log(q / (1 + q)) - math.log(ratio)
    return numerics.find_root(f, Q_BRACKET)


def bound_parameters(data: SamplePaths, p_guess: float) -> BoundsBox:
    """Bounding box for (q, k, eta, sigma) from the sample-mean spline.

    K* = (1+p) S(t_I*) with t_I* the observed inflection; q_1, q_2 come from
    S(t_j) = K* (q_j/(1+q_j))^{q_j} at t_1 (first time with S/K* > 1/e) and t_2
    (first observation after t_I*).  The k and eta intervals are the ranges of
    g(t, q) = (q((K*/x0)^{1/q} - 1))^{1/(t0 - t)} and h(q, k, t) = q k^t over
    the corners of the resulting rectangle.
    """
    if not p_guess > 0:
        raise ValidationError("p must be positive")
    grid, mean, s = _mean_spline(data)
    t_inf = numerics.observed_inflection(s)
    x_inf = float(s(t_inf))
    k_star = (1 + p_guess) * x_inf
    above = np.nonzero(mean / k_star > math.exp(-1))[0]
    if above.size == 0:
        raise DomainError("no observation with S(t)/K* > 1/e")
    t1 = float(grid[above[0]])
    after = np.nonzero(grid > t_inf)[0]
    if after.size == 0:
        raise DomainError("no observation after the observed inflection")
    t2 = float(grid[after[0]])
    q1 = _solve_q(float(s(t1)) / k_star)
    q2 = _solve_q(float(s(t2)) / k_star)
    t0 = data.t0
    x0 = float(mean[0])

    def g(t, q):
        return (q * ((k_star / x0) ** (1 / q) - 1)) ** (1 / (t0 - t))

    qs, ts = (q1, q2), (t1, t2)
    ks = [g(t, q) for t in ts for q in qs]
    k_lo, k_hi = max(min(ks), 1e-12), min(max(ks), 1 - 1e-12)
    etas = [q * k ** t for q in qs for k in (k_lo, k_hi) for t in ts]
    prov = {"t1": t1, "t2": t2, "K_star": k_star, "t_inflection_obs": t_inf, "x_inflection_obs": x_inf,
            "q1": q1, "q2": q2, "x0": x0}
    return BoundsBox((min(qs), max(qs)), (k_lo, k_hi), (min(etas), max(etas)), SIGMA_INTERVAL, prov)


def window_end_for(data: SamplePaths, p: float) -> tuple[float, bool]:
    """First observation time where the sample mean reaches (1+p) S(t_I*); (last time, False) if never."""
    grid, mean, s = _mean_spline(data)
    level = (1 + p) * float(s(numerics.observed_inflection(s)))
    hit = np.nonzero(mean >= level)[0]
    if hit.size == 0:
        return float(grid[-1]), False
    return float(grid[hit[0]]), True


def fit_mle(data: SamplePaths, window_end: float, box: BoundsBox, method: str = "sa",
            budget: OptBudget | None = None, n_replications: int = 1) -> tuple[DiffusionParams, list]:
    """Replicate-averaged maximiser of the classical likelihood on [t0, window_end]."""
    budget = budget or OptBudget()
    sub = data.restrict(window_end)
    vt = v_transform(sub)
    if vt.n < MIN_INCREMENTS:
        raise ValidationError(f"only {vt.n} increments up to t={window_end}; need at least {MIN_INCREMENTS}")
    runs = replicate_runs(method, _objective(vt), box.to_box(), budget, n_replications)
    xs = [r.x for r in runs]
    q, k, eta, sigma = np.mean(xs, axis=0)
    mu1, s1 = initial_mles(vt.v0)
    rich = RichardsParams(q=float(q), k=float(k), eta=float(eta), t0=data.t0, x0=math.exp(mu1 + 0.5 * s1))
    return DiffusionParams(rich, float(sigma)), xs


def estimate_tstar(mle: DiffusionParams, p: float, mode: str = "deterministic", fpt_cfg: FptConfig | None = None,
                   init: InitialLaw | None = None, observed_inflection_value: float | None = None):
    """t* from the switch-time formula at the MLEs, or as the mean FPT through (1+p) x_I."""
    if mode == "deterministic":
        return switch_time(mle.richards, p), None
    if mode != "fpt":
        raise ValidationError("mode must be 'deterministic' or 'fpt'")
    cfg = fpt_cfg or FptConfig()
    r = mle.richards
    if cfg.boundary_source == "observed":
        if observed_inflection_value is None:
            raise ValidationError("observed boundary needs the observed inflection value")
        x_i = observed_inflection_value
    else:
        from .growth import tangent_summary
        x_i = tangent_summary(r).x_at_inflection
    init = init or InitialLaw.degenerate(r.x0)
    horizon = cfg.horizon if cfg.horizon is not None else r.t0 + 3 * max(switch_time(r, p) - r.t0, 1.0)
    dens = fpt_monte_carlo(mle.classical(), init, (1 + p) * x_i, horizon, cfg.n_paths, cfg.dt, cfg.seed)
    summary = fpt_summary(dens)
    return summary.mean, summary


def estimate_C(data_full: SamplePaths, mle: DiffusionParams, t_star_hat: float) -> Perturbation:
    """Tabulated C-hat from m(t) = log(sample mean / fitted classical mean).

    C-hat(t) = (eta + k^t) / (k^t |log k|) m'(t) on observation times after t*,
    with m' from a natural spline of m, clamped at 0 and preceded by (t*, 0).
    """
    grid, mean = data_full.sample_mean()
    post = grid[grid > t_star_hat]
    if post.size < 4:
        raise DomainError("cannot estimate C: fewer than 4 observation times after t*")
    if np.any(mean <= 0):
        raise DomainError("sample mean must be positive")
    r = mle.richards
    m = np.log(mean / np.asarray(evaluate_richards(r, grid)))
    dm = numerics.spline_derivatives(numerics.spline_fit(grid, m), post, 1)
    c = np.maximum(dm / np.asarray(kernel(r, post)), 0.0)
    return Perturbation.tabulated(np.concatenate([[t_star_hat], post]), np.concatenate([[0.0], c]))


def reconstructed_mean(mle: DiffusionParams, c_hat: Perturbation, times) -> np.ndarray:
    return np.asarray(evaluate_modified(mle.richards, c_hat, times))


def run_procedure1(data: SamplePaths, p, method: str = "sa", budget: OptBudget | None = None,
                   n_replications: int = 1, fpt_cfg: FptConfig | None = None, with_fpt: bool = True,
                   window_end: float | None = None) -> FitReport:
    """Bound, fit on [t0, t_bar], estimate t* and C, and score the reconstructed mean.

    ``p`` may be a single value or a sequence of candidates; with candidates the
    report for the smallest reconstruction RAE is returned, carrying the
    per-candidate RAE table.  Candidates whose bounding or C estimation fails
    are listed with an infinite RAE.
    """
    if isinstance(p, (list, tuple, np.ndarray)):
        cands = [float(v) for v in p]
        if not cands:
            raise ValidationError("empty candidate set for p")
        reports, failures = [], {}
        for v in cands:
            try:
                reports.append(run_procedure1(data, v, method, budget, n_replications, fpt_cfg, with_fpt,
                                              window_end))
            except DomainError as exc:
                failures[v] = str(exc)
        if not reports:
            raise DomainError("no candidate p could be fitted: " + "; ".join(
                f"p={v:g}: {msg}" for v, msg in failures.items()))
        best = min(reports, key=lambda rep: rep.rae_mean)
        best.candidates = {rep.p: rep.rae_mean for rep in reports} | {v: math.inf for v in failures}
        best.warnings += [f"candidate p={v:g} skipped: {msg}" for v, msg in failures.items()]
        return best
    p = float(p)
    warnings = []
    bounds = bound_parameters(data, p)
    if window_end is None:
        window_end, crossed = window_end_for(data, p)
        if not crossed:
            warnings.append("sample mean never reaches the switch boundary; fitting on all observations")
    mle, trace = fit_mle(data, window_end, bounds, method, budget, n_replications)
    mu1, s1 = initial_mles([v[0] for v in data.values])
    t_det, _ = estimate_tstar(mle, p, "deterministic")
    t_fpt = None
    if with_fpt:
        _, t_fpt = estimate_tstar(mle, p, "fpt", fpt_cfg, InitialLaw(mu1, s1),
                                  bounds.provenance["x_inflection_obs"])
    c_hat = estimate_C(data, mle, t_det)
    grid, mean = data.sample_mean()
    score = rae(mean, reconstructed_mean(mle, c_hat, grid))
    return FitReport(p, mle, (mu1, s1), bounds, window_end, t_det, t_fpt, c_hat, score, trace,
                     {p: score}, warnings,
                     (bounds.provenance["t_inflection_obs"], bounds.provenance["x_inflection_obs"]))
