"""Classical and perturbed Richards growth curves.

The classical curve is

    x(t) = x0 * ((eta + k**t0) / (eta + k**t))**q,      t >= t0,

and the perturbed one replaces ``q`` by ``q + C(t)`` after a switching
time ``t*``, which multiplies the curve by ``exp(int_{t*}^t C(s) w(s) ds)``
with the kernel ``w(s) = k**s |log k| / (eta + k**s)``.

Powers of ``k`` are always computed as ``exp(t * log k)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import numerics
from .errors import DomainError, ValidationError

KIND_NONE = "none"
KIND_POWER = "power"
KIND_SIGMOID = "sigmoid"
KIND_TABULATED = "tabulated"


@dataclass(frozen=True)
class RichardsParams:
    q: float
    k: float
    eta: float
    t0: float = 0.0
    x0: float = 1.0

    def __post_init__(self):
        for name in ("q", "k", "eta", "t0", "x0"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if not self.q > 0:
            raise ValidationError(f"q must be positive, got {self.q}")
        if not 0 < self.k < 1:
            raise ValidationError(f"k must lie in (0, 1), got {self.k}")
        if not self.eta > 0:
            raise ValidationError(f"eta must be positive, got {self.eta}")
        if not self.x0 > 0:
            raise ValidationError(f"x0 must be positive, got {self.x0}")

    @property
    def log_k(self) -> float:
        return math.log(self.k)

    def kpow(self, t):
        return np.exp(np.asarray(t, dtype=float) * self.log_k)

    def replace(self, **changes) -> "RichardsParams":
        values = {f: getattr(self, f) for f in ("q", "k", "eta", "t0", "x0")}
        values.update(changes)
        return RichardsParams(**values)


@dataclass(frozen=True)
class Perturbation:
    """The additive perturbation C(t) of the shape exponent, active after ``t_star``.

    Use the constructors :meth:`none`, :meth:`power`, :meth:`sigmoid` and
    :meth:`tabulated` rather than building instances directly.
    """

    kind: str = KIND_NONE
    t_star: float = math.inf
    m: float | None = None
    y: float | None = None
    alpha: float | None = None
    beta: float | None = None
    knots: tuple[tuple[float, float], ...] = field(default=())

    def __post_init__(self):
        if self.kind == KIND_NONE:
            return
        if not math.isfinite(self.t_star):
            raise ValidationError("t_star must be finite for a non-trivial perturbation")
        if self.kind == KIND_POWER:
            if self.m is None or not self.m > 0:
                raise ValidationError("power-form perturbation needs m > 0")
        elif self.kind == KIND_SIGMOID:
            for name in ("y", "alpha", "beta"):
                v = getattr(self, name)
                if v is None or not v > 0:
                    raise ValidationError(f"sigmoid-form perturbation needs {name} > 0")
        elif self.kind == KIND_TABULATED:
            if len(self.knots) < 2:
                raise ValidationError("tabulated perturbation needs at least 2 knots")
            ts = np.array([p[0] for p in self.knots])
            vs = np.array([p[1] for p in self.knots])
            if np.any(np.diff(ts) <= 0):
                raise ValidationError("tabulated knot times must be strictly increasing")
            if np.any(vs < 0) or not np.all(np.isfinite(vs)):
                raise ValidationError("tabulated values must be finite and nonnegative")
            if ts[0] != self.t_star or vs[0] != 0.0:
                raise ValidationError("first tabulated knot must be (t_star, 0)")
        else:
            raise ValidationError(f"unknown perturbation kind {self.kind!r}")

    @classmethod
    def none(cls) -> "Perturbation":
        return cls()

    @classmethod
    def power(cls, m: float, t_star: float) -> "Perturbation":
        return cls(KIND_POWER, float(t_star), m=float(m))

    @classmethod
    def sigmoid(cls, y: float, alpha: float, beta: float, t_star: float) -> "Perturbation":
        return cls(KIND_SIGMOID, float(t_star), y=float(y), alpha=float(alpha), beta=float(beta))

    @classmethod
    def tabulated(cls, times: Sequence[float], values: Sequence[float]) -> "Perturbation":
        knots = tuple((float(t), float(v)) for t, v in zip(times, values))
        if not knots:
            raise ValidationError("tabulated perturbation needs knots")
        return cls(KIND_TABULATED, knots[0][0], knots=knots)

    @property
    def is_none(self) -> bool:
        return self.kind == KIND_NONE

    @cached_property
    def _pchip(self) -> PchipInterpolator:
        ts = np.array([p[0] for p in self.knots])
        vs = np.array([p[1] for p in self.knots])
        return PchipInterpolator(ts, vs, extrapolate=False)

    def knot_times(self) -> np.ndarray:
        return np.array([p[0] for p in self.knots])

    def knot_values(self) -> np.ndarray:
        return np.array([p[1] for p in self.knots])

    def shifted(self, dt: float) -> "Perturbation":
        """Same perturbation with the switch moved to ``t_star + dt``."""
        if self.kind == KIND_NONE:
            return self
        if self.kind == KIND_TABULATED:
            return Perturbation.tabulated(self.knot_times() + dt, self.knot_values())
        return Perturbation(self.kind, self.t_star + dt, m=self.m, y=self.y,
                            alpha=self.alpha, beta=self.beta)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == KIND_NONE:
            return out
        out["t_star"] = self.t_star
        if self.kind == KIND_POWER:
            out["m"] = self.m
        elif self.kind == KIND_SIGMOID:
            out.update(y=self.y, alpha=self.alpha, beta=self.beta)
        else:
            out["times"] = self.knot_times().tolist()
            out["values"] = self.knot_values().tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Perturbation":
        kind = d.get("kind", KIND_NONE)
        if kind == KIND_NONE:
            return cls.none()
        if kind == KIND_POWER:
            return cls.power(d["m"], d["t_star"])
        if kind == KIND_SIGMOID:
            return cls.sigmoid(d["y"], d["alpha"], d["beta"], d["t_star"])
        if kind == KIND_TABULATED:
            return cls.tabulated(d["times"], d["values"])
        raise ValidationError(f"unknown perturbation kind {kind!r}")


@dataclass(frozen=True)
class TangentSummary:
    t_inflection: float
    x_at_inflection: float
    mu: float
    lambda_lag: float
    inflection_after_start: bool


def kernel(params: RichardsParams, t):
    """w(t) = k^t |log k| / (eta + k^t)."""
    kt = params.kpow(t)
    return kt * abs(params.log_k) / (params.eta + kt)


def evaluate_richards(params: RichardsParams, t):
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < params.t0):
        raise DomainError(f"t must be >= t0={params.t0}")
    out = params.x0 * ((params.eta + params.kpow(params.t0)) / (params.eta + params.kpow(t_arr))) ** params.q
    return float(out) if out.ndim == 0 else out


def carrying_capacity(params: RichardsParams) -> float:
    return params.x0 * (1.0 + float(params.kpow(params.t0)) / params.eta) ** params.q


def growth_rate_h(params: RichardsParams, t):
    out = params.q * kernel(params, t)
    return float(out) if np.ndim(out) == 0 else out


def tangent_summary(params: RichardsParams) -> TangentSummary:
    q, eta = params.q, params.eta
    t_i = math.log(eta / q) / params.log_k
    x_i = carrying_capacity(params) * (q / (1.0 + q)) ** q
    mu = ((eta + float(params.kpow(params.t0))) ** q * params.x0 * abs(params.log_k) / eta ** q
          * (q / (q + 1.0)) ** (q + 1.0))
    lag = t_i - (1.0 + 1.0 / q) / abs(params.log_k)
    return TangentSummary(t_i, x_i, mu, lag, bool(eta < q * float(params.kpow(params.t0))))


def first_crossing_time(params: RichardsParams, p: float, t: float) -> float:
    """First time the curve reaches (1+p)·x(t); +inf if that is above the carrying capacity."""
    if not p > 0:
        raise DomainError("p must be positive")
    arg = (params.eta + float(params.kpow(t))) / (1.0 + p) ** (1.0 / params.q) - params.eta
    if arg <= 0:
        return math.inf
    return math.log(arg) / params.log_k


def switch_time(params: RichardsParams, p: float) -> float:
    """Crossing time of the boundary (1+p)·x(t_I)."""
    if not p > 0:
        raise DomainError("p must be positive")
    q = params.q
    arg = (1.0 + q) / (1.0 + p) ** (1.0 / q) - q
    if arg <= 0:
        raise DomainError(f"boundary unreachable: (1+p)x(t_I) exceeds the carrying capacity (p={p})")
    t_i = math.log(params.eta / q) / params.log_k
    return t_i + math.log(arg) / params.log_k


def perturbation_value(c: Perturbation, params: RichardsParams, t):
    t_arr = np.asarray(t, dtype=float)
    out = np.zeros_like(t_arr)
    if c.is_none:
        return float(out) if out.ndim == 0 else out
    on = t_arr > c.t_star
    ts = t_arr[on]
    if c.kind == KIND_POWER:
        vals = (1.0 / (params.eta + params.kpow(ts))) ** c.m - (1.0 / (params.eta + params.kpow(c.t_star))) ** c.m
    elif c.kind == KIND_SIGMOID:
        vals = c.y * np.exp((c.alpha / c.beta) * (1.0 - (ts - c.t_star) ** (-c.beta)))
    else:
        last_t, last_v = c.knots[-1]
        vals = np.where(ts >= last_t, last_v, c._pchip(np.minimum(ts, last_t)))
    out[on] = np.maximum(vals, 0.0)
    return float(out) if out.ndim == 0 else out


def perturbation_sup(c: Perturbation, params: RichardsParams) -> float:
    if c.is_none:
        return 0.0
    if c.kind == KIND_POWER:
        return (1.0 / params.eta) ** c.m - (1.0 / (params.eta + float(params.kpow(c.t_star)))) ** c.m
    if c.kind == KIND_SIGMOID:
        return c.y * math.exp(c.alpha / c.beta)
    return float(np.max(c.knot_values()))


def _breakpoints(c: Perturbation, lo: float, hi: float) -> list[float]:
    pts = [lo]
    if c.kind == KIND_TABULATED:
        pts += [t for t in c.knot_times() if lo < t < hi]
    pts.append(hi)
    return pts


def perturbation_integral(c: Perturbation, params: RichardsParams, a: float, b: float) -> float:
    """int_{max(a,t*)}^{max(b,t*)} C(u) w(u) du."""
    if b < a:
        raise DomainError("perturbation_integral requires a <= b")
    if c.is_none or b <= c.t_star:
        return 0.0
    lo, hi = max(a, c.t_star), max(b, c.t_star)

    def f(u):
        return perturbation_value(c, params, u) * kernel(params, u)

    pts = _breakpoints(c, lo, hi)
    return sum(numerics.integrate(f, u, v) for u, v in zip(pts[:-1], pts[1:]))


def cumulative_perturbation_integral(c: Perturbation, params: RichardsParams, times) -> np.ndarray:
    """int_{t*}^{max(t_j, t*)} C w for a nondecreasing array of times."""
    ts = np.asarray(times, dtype=float)
    out = np.zeros_like(ts)
    if c.is_none:
        return out
    if np.any(np.diff(ts) < 0):
        raise ValidationError("times must be nondecreasing")
    acc, prev = 0.0, c.t_star
    for j, t in enumerate(ts):
        if t > prev:
            acc += perturbation_integral(c, params, prev, t)
            prev = t
        out[j] = acc
    return out


def evaluate_modified(params: RichardsParams, c: Perturbation, t):
    t_arr = np.asarray(t, dtype=float)
    base = np.asarray(evaluate_richards(params, t_arr))
    if c.is_none:
        return float(base) if base.ndim == 0 else base
    flat = t_arr.ravel()
    order = np.argsort(flat, kind="stable")
    integ = np.empty_like(flat)
    integ[order] = cumulative_perturbation_integral(c, params, flat[order])
    out = base * np.exp(integ.reshape(t_arr.shape))
    return float(out) if out.ndim == 0 else out


def growth_rate_modified(params: RichardsParams, c: Perturbation, t):
    out = (params.q + np.asarray(perturbation_value(c, params, t))) * kernel(params, t)
    return float(out) if np.ndim(out) == 0 else out


def tail_horizon(c: Perturbation, params: RichardsParams, threshold: float = 1e-12) -> float:
    """Time beyond which w(t)·sup C stays below ``threshold``."""
    sup = perturbation_sup(c, params)
    if sup <= 0:
        return c.t_star
    # w(t) <= k^t |log k| / eta
    t_inf = math.log(threshold * params.eta / (abs(params.log_k) * sup)) / params.log_k
    return max(t_inf, c.t_star)


def modified_carrying_capacity(params: RichardsParams, c: Perturbation) -> float:
    k_cap = carrying_capacity(params)
    if c.is_none:
        return k_cap
    return k_cap * math.exp(perturbation_integral(c, params, c.t_star, tail_horizon(c, params)))


def _dC_dtstar(c: Perturbation, params: RichardsParams, s, eps: float):
    s = np.asarray(s, dtype=float)
    on = s > c.t_star
    out = np.zeros_like(s)
    if c.kind == KIND_POWER:
        kt = float(params.kpow(c.t_star))
        out[on] = c.m * (params.eta + kt) ** (-c.m - 1.0) * kt * params.log_k
    elif c.kind == KIND_SIGMOID:
        u = s[on] - c.t_star
        out[on] = -c.alpha * perturbation_value(c, params, s[on]) * u ** (-c.beta - 1.0)
    else:
        out = (perturbation_value(c.shifted(eps), params, s) - perturbation_value(c, params, s)) / eps
    return out


def sensitivity_sign(params: RichardsParams, c: Perturbation, t: float, eps: float = 1e-3) -> int:
    """Sign of the change of the perturbed curve at ``t`` when the switch is delayed."""
    if c.is_none or t <= c.t_star:
        return 0
    if not 0 < eps <= 0.5:
        raise DomainError("eps must lie in (0, 0.5]")

    def f(u):
        return float(_dC_dtstar(c, params, u, eps)) * kernel(params, u)

    pts = _breakpoints(c, c.t_star, t)
    val = sum(numerics.integrate(f, u, v) for u, v in zip(pts[:-1], pts[1:]))
    return int(np.sign(val))
