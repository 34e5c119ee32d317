import numpy as np
import pytest

from richfit.errors import NumericalError, ValidationError
from richfit.optimize import Box, OptBudget, alo_maximize, replicate_average, replicate_runs, sa_maximize

BOX = Box.from_pairs([(-5, 5), (0, 10), (1.5, 2.5), (-1, 0)])
CENTER = np.array([1.3, 7.2, 2.1, -0.4])


def sphere(x):
    return -float(np.sum((x - CENTER) ** 2))


class Audit:
    def __init__(self, fn):
        self.fn, self.calls = fn, []

    def __call__(self, x):
        v = self.fn(x)
        self.calls.append((np.array(x, copy=True), v))
        return v


def test_box_validation_and_reflect():
    with pytest.raises(ValidationError):
        Box.from_pairs([(1, 1)])
    with pytest.raises(ValidationError):
        Box.from_pairs([(0, np.inf)])
    b = Box.from_pairs([(0, 1)])
    assert np.allclose(b.reflect(np.array([1.3])), 0.7)
    assert np.allclose(b.reflect(np.array([-0.2])), 0.2)
    assert np.allclose(b.reflect(np.array([2.4])), 0.4)


def test_budget_validation():
    with pytest.raises(ValidationError):
        OptBudget(cooling_rate=1.0)
    with pytest.raises(ValidationError):
        OptBudget(max_evaluations=10, population=20)


def test_sa_sphere():
    res = sa_maximize(sphere, BOX, OptBudget(seed=1))
    assert np.max(np.abs(res.x - CENTER)) < 1e-3
    rng = np.random.default_rng(0)
    assert all(res.value >= sphere(p) for p in BOX.uniform(rng, 100))


def test_alo_sphere():
    res = alo_maximize(sphere, BOX, OptBudget(seed=1, population=30))
    assert np.max(np.abs(res.x - CENTER)) < 1e-2
    assert np.all(np.diff(res.trace) >= 0)


@pytest.mark.parametrize("fn", [sa_maximize, alo_maximize])
def test_audit(fn):
    obj = Audit(sphere)
    budget = OptBudget(max_evaluations=3000, seed=4)
    res = fn(obj, BOX, budget)
    xs = np.array([c[0] for c in obj.calls])
    vs = np.array([c[1] for c in obj.calls])
    assert len(obj.calls) <= budget.max_evaluations and res.evaluations == len(obj.calls)
    assert np.all(xs >= BOX.lo) and np.all(xs <= BOX.hi)
    i = int(np.argmax(vs))
    assert res.value == vs[i] and np.array_equal(res.x, xs[i])


@pytest.mark.parametrize("fn", [sa_maximize, alo_maximize])
def test_determinism(fn, monkeypatch):
    b = OptBudget(max_evaluations=2000, seed=7)
    a1, a2 = fn(sphere, BOX, b), fn(sphere, BOX, b)
    assert np.array_equal(a1.x, a2.x) and a1.value == a2.value
    monkeypatch.setenv("RICHFIT_THREADS", "1")
    r1 = replicate_average("sa", sphere, BOX, b, 4)
    monkeypatch.setenv("RICHFIT_THREADS", "4")
    r2 = replicate_average("sa", sphere, BOX, b, 4)
    assert np.array_equal(r1, r2)


def test_nonfinite_handling():
    def partial(x):
        return np.nan if x[0] < 0 else sphere(x)

    res = sa_maximize(partial, BOX, OptBudget(max_evaluations=4000, seed=2))
    assert np.isfinite(res.value) and res.x[0] >= 0
    with pytest.raises(NumericalError):
        sa_maximize(lambda x: np.nan, BOX, OptBudget(max_evaluations=200))
    with pytest.raises(NumericalError):
        alo_maximize(lambda x: -np.inf, BOX, OptBudget(max_evaluations=200))


def test_replicate_average():
    b = OptBudget(max_evaluations=1500, seed=3)
    single = replicate_average("alo", sphere, BOX, b, 1)
    assert np.array_equal(single, alo_maximize(sphere, BOX, b, stream=0).x)
    runs = replicate_runs("sa", sphere, BOX, b, 6)
    avg = np.mean([r.x for r in runs], axis=0)
    worst = np.max([np.abs(r.x - CENTER) for r in runs], axis=0)
    assert np.all(np.abs(avg - CENTER) <= worst)
    assert np.array_equal(avg, replicate_average("sa", sphere, BOX, b, 6))
    with pytest.raises(ValidationError):
        replicate_average("bfgs", sphere, BOX, b, 1)


def test_spread_shrinks_with_budget():
    spreads = []
    for evals in (300, 3000, 20000):
        meds = []
        for seed in range(10):
            runs = replicate_runs("sa", sphere, BOX, OptBudget(max_evaluations=evals, seed=seed), 3)
            meds.append(np.var([r.x for r in runs], axis=0).sum())
        spreads.append(np.median(meds))
    assert spreads[0] > spreads[1] > spreads[2]
