"""Gradient-free box-constrained maximisers: simulated annealing and the ant lion optimizer."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from . import numerics
from .errors import NumericalError, ValidationError

Objective = Callable[[np.ndarray], float]
FINAL_TEMPERATURE = 1e-8


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).ravel()
        hi = np.asarray(self.hi, dtype=float).ravel()
        if lo.shape != hi.shape or lo.size == 0:
            raise ValidationError("box bounds must be nonempty and of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo < hi)):
            raise ValidationError("box needs finite bounds with lo < hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]]) -> "Box":
        arr = np.asarray(pairs, dtype=float)
        return cls(arr[:, 0], arr[:, 1])

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def reflect(self, x: np.ndarray) -> np.ndarray:
        """Fold points back into the box by mirror reflection at the faces."""
        w = self.width
        r = np.mod(np.asarray(x, dtype=float) - self.lo, 2 * w)
        return np.clip(self.lo + np.where(r > w, 2 * w - r, r), self.lo, self.hi)

    def uniform(self, rng, n: int | None = None) -> np.ndarray:
        shape = (self.dim,) if n is None else (n, self.dim)
        return self.lo + self.width * rng.random(shape)


@dataclass(frozen=True)
class OptBudget:
    max_evaluations: int = 20_000
    population: int = 30
    initial_temperature: float = 1.0
    cooling_rate: float = 0.995
    seed: int = 0
    probes: int = 50
    local_search: float = 0.1

    def __post_init__(self):
        if self.max_evaluations < 2:
            raise ValidationError("max_evaluations must be >= 2")
        if not 2 <= self.population <= self.max_evaluations:
            raise ValidationError("population must satisfy 2 <= population <= max_evaluations")
        if not self.initial_temperature > 0:
            raise ValidationError("initial_temperature must be positive")
        if not 0 < self.cooling_rate < 1:
            raise ValidationError("cooling_rate must lie in (0, 1)")
        if not 0 <= self.local_search < 1:
            raise ValidationError("local_search must lie in [0, 1)")


@dataclass
class OptResult:
    x: np.ndarray
    value: float
    evaluations: int
    trace: list = field(default_factory=list)

    def __iter__(self):
        yield self.x
        yield self.value


def _safe(objective: Objective, x: np.ndarray) -> float:
    try:
        v = float(objective(x))
    except (ArithmeticError, ValueError, OverflowError):
        return -math.inf
    return v if math.isfinite(v) else -math.inf


def sa_maximize(objective: Objective, box: Box, budget: OptBudget, stream: int = 0) -> OptResult:
    """Simulated annealing with geometric cooling and reflected Gaussian proposals.

    The objective is rescaled by the spread of its values over ``budget.probes``
    uniform points so that the temperature scale is problem independent.  The
    temperature drops by ``cooling_rate`` once per level; the level length is
    chosen so that T/T0 reaches ``FINAL_TEMPERATURE`` as the budget runs out.
    Each new level restarts the chain from the best point seen so far.  The last
    ``budget.local_search`` fraction of the evaluations goes to a bounded
    Nelder-Mead search started at the best annealing point.
    """
    rng = numerics.rng_stream(budget.seed, stream)
    n_probe = min(budget.probes, budget.max_evaluations - 1)
    probes = box.uniform(rng, n_probe)
    vals = np.array([_safe(objective, p) for p in probes])
    finite = vals[np.isfinite(vals)]
    scale = float(np.std(finite)) if finite.size > 1 else 0.0
    if not scale > 0:
        scale = max(abs(float(finite[0])), 1.0) if finite.size else 1.0
    used = n_probe
    best_i = int(np.argmax(vals))
    best_x, best_v = probes[best_i].copy(), float(vals[best_i])
    cur_x, cur_v = probes[0].copy(), float(vals[0])
    t0 = budget.initial_temperature
    temp = t0
    n_levels = math.ceil(math.log(FINAL_TEMPERATURE) / math.log(budget.cooling_rate))
    n_local = int(budget.local_search * budget.max_evaluations)
    anneal_end = budget.max_evaluations - n_local
    per_level = max(1, math.ceil((anneal_end - used) / n_levels))
    trace = [best_v]
    while used < anneal_end:
        step = 0.1 * box.width * math.sqrt(temp / t0)
        cand = box.reflect(cur_x + step * rng.standard_normal(box.dim))
        v = _safe(objective, cand)
        used += 1
        u = rng.random()
        if v >= cur_v or cur_v == -math.inf:
            accept = True
        elif v == -math.inf:
            accept = False
        else:
            accept = u < math.exp((v - cur_v) / (scale * temp))
        if accept:
            cur_x, cur_v = cand, v
        if v > best_v:
            best_x, best_v = cand.copy(), v
        if (used - n_probe) % per_level == 0:
            temp *= budget.cooling_rate
            cur_x, cur_v = best_x, best_v
        trace.append(best_v)
    if best_v == -math.inf:
        raise NumericalError("objective was never finite on the box")
    if n_local > box.dim + 1:
        best_x, best_v, n_used = _local_search(objective, box, best_x, best_v, n_local, trace)
        used += n_used
    return OptResult(best_x, best_v, used, trace)


class _BudgetSpent(Exception):
    pass


def _local_search(objective: Objective, box: Box, x0: np.ndarray, v0: float, max_evals: int, trace: list):
    """Bounded Nelder-Mead polish; never exceeds ``max_evals`` objective calls."""
    state = {"n": 0, "x": x0, "v": v0}

    def neg(x):
        if state["n"] >= max_evals:
            raise _BudgetSpent
        state["n"] += 1
        x = np.clip(x, box.lo, box.hi)
        v = _safe(objective, x)
        if v > state["v"]:
            state["x"], state["v"] = x.copy(), v
        trace.append(state["v"])
        return -v if v > -math.inf else math.inf

    try:
        minimize(neg, x0, method="Nelder-Mead", bounds=list(zip(box.lo, box.hi)),
                 options={"maxfev": max_evals, "xatol": 1e-12, "fatol": 1e-12, "adaptive": True})
    except _BudgetSpent:
        pass
    return state["x"], state["v"], state["n"]


def _shrink_ratio(it: int, n_iter: int) -> float:
    """Staged boundary shrink factor I of the ant lion optimizer."""
    frac = it / n_iter
    w = 0
    for thresh, power in ((0.1, 2), (0.5, 3), (0.75, 4), (0.9, 5), (0.95, 6)):
        if frac > thresh:
            w = power
    return max(1.0, 10.0 ** w * frac)


def _random_walks(rng, n: int, dim: int, n_iter: int, it: int, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Position at step ``it`` of min-max normalised +-1 cumulative walks mapped onto [lo, hi]."""
    steps = np.where(rng.random((n, dim, n_iter)) > 0.5, 1.0, -1.0)
    walk = np.concatenate([np.zeros((n, dim, 1)), np.cumsum(steps, axis=2)], axis=2)
    a, b = walk.min(axis=2), walk.max(axis=2)
    pos = walk[:, :, min(it, n_iter)]
    return lo + (pos - a) * (hi - lo) / np.where(b > a, b - a, 1.0)


def _roulette(rng, fitness: np.ndarray, n: int) -> np.ndarray:
    """Rank-weighted roulette selection (best rank gets the largest weight)."""
    order = np.argsort(-fitness, kind="stable")
    ranks = np.empty(fitness.size)
    ranks[order] = np.arange(fitness.size, 0, -1)
    cum = np.cumsum(ranks / ranks.sum())
    return np.minimum(np.searchsorted(cum, rng.random(n)), fitness.size - 1)


def alo_maximize(objective: Objective, box: Box, budget: OptBudget, stream: int = 0) -> OptResult:
    """Ant lion optimizer: ants walk around roulette-chosen antlions and the elite.

    Walk half-widths shrink as width/(2 I) with the staged ratio I, centred on
    the antlion, and positions are reflected into the box.
    """
    rng = numerics.rng_stream(budget.seed, stream)
    n = budget.population
    n_iter = max((budget.max_evaluations - n) // n, 1)
    antlions = box.uniform(rng, n)
    lion_fit = np.array([_safe(objective, a) for a in antlions])
    used = n
    e = int(np.argmax(lion_fit))
    elite, elite_v = antlions[e].copy(), float(lion_fit[e])
    trace = [elite_v]
    half = box.width / 2
    for it in range(1, n_iter + 1):
        if used + n > budget.max_evaluations:
            break
        ratio = _shrink_ratio(it, n_iter)
        r = half / ratio
        chosen = antlions[_roulette(rng, lion_fit, n)]
        walk_a = _random_walks(rng, n, box.dim, n_iter, it, chosen - r, chosen + r)
        walk_e = _random_walks(rng, n, box.dim, n_iter, it, elite - r, elite + r)
        ants = box.reflect((walk_a + walk_e) / 2)
        ant_fit = np.array([_safe(objective, a) for a in ants])
        used += n
        pool = np.vstack([antlions, ants])
        pool_fit = np.concatenate([lion_fit, ant_fit])
        keep = np.argsort(-pool_fit, kind="stable")[:n]
        antlions, lion_fit = pool[keep], pool_fit[keep]
        if lion_fit[0] > elite_v:
            elite, elite_v = antlions[0].copy(), float(lion_fit[0])
        trace.append(elite_v)
    if elite_v == -math.inf:
        raise NumericalError("objective was never finite on the box")
    return OptResult(elite, elite_v, used, trace)


METHODS = {"sa": sa_maximize, "alo": alo_maximize}


def replicate_runs(method: str, objective: Objective, box: Box, budget: OptBudget,
                   n_replications: int) -> list[OptResult]:
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; expected one of {sorted(METHODS)}")
    if n_replications < 1:
        raise ValidationError("n_replications must be >= 1")
    fn = METHODS[method]
    return numerics.parallel_map(lambda r: fn(objective, box, budget, stream=r), range(n_replications))


def replicate_average(method: str, objective: Objective, box: Box, budget: OptBudget,
                      n_replications: int) -> np.ndarray:
    runs = replicate_runs(method, objective, box, budget, n_replications)
    return np.mean([r.x for r in runs], axis=0)
