import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from richfit.errors import DomainError, ValidationError
from richfit.growth import (
    Perturbation, RichardsParams, carrying_capacity, evaluate_modified, evaluate_richards,
    first_crossing_time, growth_rate_h, modified_carrying_capacity, perturbation_integral,
    perturbation_value, sensitivity_sign, switch_time, tangent_summary,
)

from conftest import STUDY, STUDY_TSTAR, power_antiderivative


def bisect(f, lo, hi, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


valid_params = st.builds(
    RichardsParams,
    q=st.floats(0.2, 6.0),
    k=st.floats(0.1, 0.95),
    eta=st.floats(0.01, 2.0),
    t0=st.just(0.0),
    x0=st.floats(0.5, 10.0),
)


def test_rejects_invalid_params():
    with pytest.raises(ValidationError):
        RichardsParams(q=-1, k=0.5, eta=0.2)
    with pytest.raises(ValidationError):
        RichardsParams(q=1, k=1.0, eta=0.2)
    with pytest.raises(ValidationError):
        RichardsParams(q=1, k=0.5, eta=0.0)
    with pytest.raises(ValidationError):
        RichardsParams(q=1, k=0.5, eta=0.2, x0=0.0)


def test_richards_anchor_values(study_params):
    assert evaluate_richards(study_params, 0.0) == pytest.approx(2.0, rel=1e-15)
    assert carrying_capacity(study_params) == pytest.approx(72.0, rel=1e-14)
    t_i = math.log(0.1) / math.log(0.5)
    assert evaluate_richards(study_params, t_i) == pytest.approx(32.0, rel=1e-13)
    assert abs(evaluate_richards(study_params, 30.0) - 72.0) < 1e-6 * 72.0


def test_richards_domain(study_params):
    with pytest.raises(DomainError):
        evaluate_richards(study_params, -0.1)


def test_monotone_on_grid(study_params):
    x = evaluate_richards(study_params, np.linspace(0, 20, 200))
    assert np.all(np.diff(x) >= 0)


def test_limit_cases():
    # eta -> 0: exponential growth x0 k^{-qt}
    p = RichardsParams(q=2, k=0.5, eta=1e-10, x0=2)
    t = np.linspace(0, 5, 51)
    expo = 2 * 0.5 ** (-2 * t)
    assert np.max(np.abs(evaluate_richards(p, t) - expo) / expo) < 1e-6
    # q -> 0: constant
    p = RichardsParams(q=1e-12, k=0.5, eta=0.2, x0=2)
    assert np.max(np.abs(evaluate_richards(p, t) - 2.0)) < 1e-9
    assert abs(carrying_capacity(p) - 2.0) < 1e-9
    # q = 1: logistic carrying capacity x0 (eta + 1)/eta
    assert carrying_capacity(RichardsParams(q=1, k=0.5, eta=0.2, x0=2)) == pytest.approx(12.0)


def test_growth_rate(study_params):
    assert growth_rate_h(study_params, 0.0) == pytest.approx(2 * math.log(2) / 1.2, rel=1e-14)
    assert growth_rate_h(study_params, 80.0) < 1e-20
    h = growth_rate_h(study_params, np.linspace(0, 20, 100))
    assert np.all(np.diff(h) < 0)
    doubled = study_params.replace(q=4.0)
    assert growth_rate_h(doubled, 1.3) == pytest.approx(2 * growth_rate_h(study_params, 1.3))


def test_tangent_summary_anchors():
    s = tangent_summary(RichardsParams(**STUDY))
    assert s.t_inflection == pytest.approx(3.32193, abs=1e-5)
    assert s.x_at_inflection == pytest.approx(32.0)
    assert s.mu == pytest.approx(14.79, abs=0.01)
    assert s.lambda_lag == pytest.approx(1.16, abs=0.01)
    assert s.inflection_after_start
    s = tangent_summary(RichardsParams(**{**STUDY, "eta": 0.3}))
    assert s.mu == pytest.approx(7.71, abs=0.01)
    assert s.lambda_lag == pytest.approx(0.57, abs=0.01)


def test_tangent_is_slope_at_inflection(study_params):
    s = tangent_summary(study_params)
    h = 1e-5
    slope = (evaluate_richards(study_params, s.t_inflection + h)
             - evaluate_richards(study_params, s.t_inflection - h)) / (2 * h)
    assert slope == pytest.approx(s.mu, rel=1e-8)
    # tangent line hits zero at the lag time
    assert s.x_at_inflection - s.mu * (s.t_inflection - s.lambda_lag) == pytest.approx(0, abs=1e-9)


def test_switch_time_study(study_params):
    oracle = bisect(lambda t: evaluate_richards(study_params, t) - 48.0, 3.32193, 20.0)
    assert switch_time(study_params, 0.5) == pytest.approx(oracle, abs=1e-10)
    assert switch_time(study_params, 0.5) == pytest.approx(STUDY_TSTAR, abs=1e-12)
    assert round(switch_time(study_params, 0.5), 6) == 4.475568


def test_switch_time_logistic():
    p = RichardsParams(q=1, k=0.5, eta=0.2, x0=2)
    target = 1.5 * tangent_summary(p).x_at_inflection
    oracle = bisect(lambda t: evaluate_richards(p, t) - target, 0.0, 40.0)
    assert switch_time(p, 0.5) == pytest.approx(oracle, abs=1e-10)


def test_switch_time_small_p_tends_to_inflection(study_params):
    assert switch_time(study_params, 1e-9) == pytest.approx(tangent_summary(study_params).t_inflection, abs=1e-7)


def test_switch_time_unreachable(study_params):
    # K / x(t_I) = 2.25 for q=2
    with pytest.raises(DomainError):
        switch_time(study_params, 1.5)


@settings(max_examples=100, deadline=None)
@given(valid_params, st.floats(0.01, 0.9))
def test_switch_time_hits_boundary(params, frac):
    ratio = (1 + 1 / params.q) ** params.q  # K / x(t_I)
    p = frac * (ratio - 1)
    t_star = switch_time(params, p)
    target = (1 + p) * tangent_summary(params).x_at_inflection
    assert t_star > tangent_summary(params).t_inflection
    x_star = params.x0 * ((params.eta + 1) / (params.eta + params.kpow(t_star))) ** params.q
    assert abs(x_star - target) <= 1e-10 * target


def test_first_crossing_time(study_params):
    t_i = tangent_summary(study_params).t_inflection
    assert first_crossing_time(study_params, 0.5, t_i) == pytest.approx(STUDY_TSTAR, abs=1e-10)
    assert first_crossing_time(study_params, 5.0, 2.0) == math.inf
    assert first_crossing_time(study_params, 1e-10, 2.5) == pytest.approx(2.5, abs=1e-8)


def test_power_perturbation_values(study_params, study_power):
    assert perturbation_value(study_power, study_params, study_power.t_star) == 0.0
    expected = 1 / (0.2 + 0.5 ** 6) - 1 / (0.2 + 0.5 ** STUDY_TSTAR)
    assert perturbation_value(study_power, study_params, 6.0) == pytest.approx(expected, rel=1e-13)
    assert perturbation_value(study_power, study_params, 6.0) == pytest.approx(0.555198, abs=1e-6)


def test_sigmoid_limit(study_params):
    c = Perturbation.sigmoid(2.0, 4.0, 0.5, 4.0)
    assert perturbation_value(c, study_params, 1e8) == pytest.approx(2.0 * math.exp(8.0), rel=1e-3)
    assert perturbation_value(c, study_params, 4.0) == 0.0


def test_perturbation_validation():
    with pytest.raises(ValidationError):
        Perturbation.power(0.0, 1.0)
    with pytest.raises(ValidationError):
        Perturbation.tabulated([1.0, 2.0], [0.1, 0.3])
    with pytest.raises(ValidationError):
        Perturbation.tabulated([1.0, 1.0], [0.0, 0.3])
    with pytest.raises(ValidationError):
        Perturbation.tabulated([1.0, 2.0], [0.0, -0.3])


def test_tabulated_interpolates_and_clamps(study_params):
    c = Perturbation.tabulated([1.0, 2.0, 3.0], [0.0, 0.5, 0.6])
    assert perturbation_value(c, study_params, 2.0) == pytest.approx(0.5)
    assert perturbation_value(c, study_params, 10.0) == pytest.approx(0.6)
    v = perturbation_value(c, study_params, np.linspace(1, 3, 50))
    assert np.all(np.diff(v) >= -1e-15)


def test_perturbation_integral_anchor(study_params, study_power):
    val = perturbation_integral(study_power, study_params, study_power.t_star, 6.0)
    exact = (power_antiderivative(study_params, 1.0, STUDY_TSTAR, 6.0)
             - power_antiderivative(study_params, 1.0, STUDY_TSTAR, STUDY_TSTAR))
    assert val == pytest.approx(exact, abs=1e-12)
    assert val == pytest.approx(0.0346444, abs=1e-7)


def test_perturbation_integral_trivial(study_params, study_power):
    assert perturbation_integral(study_power, study_params, 0.0, 4.0) == 0.0
    assert perturbation_integral(Perturbation.none(), study_params, 0.0, 9.0) == 0.0


def test_perturbation_integral_random_intervals(study_params, study_power):
    rng = np.random.default_rng(7)
    for _ in range(100):
        a, b = np.sort(rng.uniform(STUDY_TSTAR, 25.0, 2))
        val = perturbation_integral(study_power, study_params, a, b)
        exact = (power_antiderivative(study_params, 1.0, STUDY_TSTAR, b)
                 - power_antiderivative(study_params, 1.0, STUDY_TSTAR, a))
        assert abs(val - exact) < 1e-10


def test_modified_curve(study_params, study_power):
    ts = study_power.t_star
    assert evaluate_modified(study_params, study_power, ts) == evaluate_richards(study_params, ts)
    expected = evaluate_richards(study_params, 6.0) * math.exp(
        power_antiderivative(study_params, 1.0, ts, 6.0) - power_antiderivative(study_params, 1.0, ts, ts))
    assert evaluate_modified(study_params, study_power, 6.0) == pytest.approx(expected, rel=1e-12)
    grid = np.linspace(0, 10, 101)
    assert np.array_equal(evaluate_modified(study_params, Perturbation.none(), grid),
                          evaluate_richards(study_params, grid))


def test_modified_dominates_classical(study_params, study_power):
    grid = np.linspace(0, 15, 301)
    xm = evaluate_modified(study_params, study_power, grid)
    x = evaluate_richards(study_params, grid)
    before = grid <= study_power.t_star
    assert np.array_equal(xm[before], x[before])
    assert np.all(xm[~before] > x[~before])
    assert np.all(np.diff((xm - x)[~before]) > 0)


def test_modified_carrying_capacity(study_params, study_power):
    assert modified_carrying_capacity(study_params, Perturbation.none()) == carrying_capacity(study_params)
    ts = study_power.t_star
    # k^t -> 0 in the antiderivative
    c = (0.2 + 0.5 ** ts) ** -1
    limit = (1 / 0.2 + c * math.log(0.2)) - power_antiderivative(study_params, 1.0, ts, ts)
    assert modified_carrying_capacity(study_params, study_power) == pytest.approx(72 * math.exp(limit), rel=1e-10)
    sig = Perturbation.sigmoid(2.0, 4.0, 0.5, ts)
    assert modified_carrying_capacity(study_params, sig) > carrying_capacity(study_params)


def test_sensitivity_sign_basic(study_params, study_power):
    assert sensitivity_sign(study_params, study_power, 4.0) == 0
    assert sensitivity_sign(study_params, Perturbation.none(), 8.0) == 0
    assert sensitivity_sign(study_params, study_power, 8.0) == -1
    sig = Perturbation.sigmoid(2.0, 4.0, 0.5, study_power.t_star)
    assert sensitivity_sign(study_params, sig, 8.0) == -1


def test_sensitivity_sign_matches_direct_evaluation():
    rng = np.random.default_rng(11)
    for _ in range(50):
        params = RichardsParams(q=rng.uniform(0.5, 4), k=rng.uniform(0.2, 0.9),
                                eta=rng.uniform(0.05, 1.0), x0=2.0)
        t_star = rng.uniform(0.5, 5.0)
        c = Perturbation.power(rng.uniform(0.3, 2.0), t_star)
        t = t_star + rng.uniform(0.1, 6.0)
        direct = evaluate_modified(params, c.shifted(1e-3), t) - evaluate_modified(params, c, t)
        assert sensitivity_sign(params, c, t) == int(np.sign(direct))


def test_sensitivity_tabulated(study_params):
    c = Perturbation.tabulated([4.5, 5.5, 7.0, 9.0], [0.0, 0.3, 0.6, 0.8])
    direct = evaluate_modified(study_params, c.shifted(1e-3), 8.0) - evaluate_modified(study_params, c, 8.0)
    assert sensitivity_sign(study_params, c, 8.0) == int(np.sign(direct))
