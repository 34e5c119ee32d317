import math

import pytest

from richfit.growth import Perturbation, RichardsParams, switch_time

# Parameter set of the simulation study: q=2, k=0.5, eta=0.2, x0=2, t0=0.
STUDY = dict(q=2.0, k=0.5, eta=0.2, t0=0.0, x0=2.0)
# Switch time for p=0.5, from the closed form; checked against bisection in test_growth.
STUDY_TSTAR = 4.47556799551372


@pytest.fixture
def study_params():
    return RichardsParams(**STUDY)


@pytest.fixture
def study_power(study_params):
    return Perturbation.power(1.0, switch_time(study_params, 0.5))


def power_antiderivative(params, m, t_star, u):
    """Antiderivative of C(u)·w(u) for the power-form C, via v = k^u."""
    c = (params.eta + params.k ** t_star) ** (-m)
    v = params.eta + math.exp(u * math.log(params.k))
    return v ** (-m) / m + c * math.log(v)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; lines are echoed in the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
