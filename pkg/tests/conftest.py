import pytest

from altserve.distributions import (
    Deterministic,
    Exponential,
    HyperExponential,
    MixedErlang,
    Moments,
    fit_moments,
)

# Acceptance results collected here are echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


SERVICE_LAWS = [
    Deterministic(0.0),
    Deterministic(0.7),
    Exponential(1.0),
    Exponential(2.5),
    MixedErlang(0.3, 4, 3.0),
    fit_moments(Moments(1.0, 0.2)),
    fit_moments(Moments(1.0, 0.8)),
    HyperExponential(0.853553, 0.146447, 1.707107, 0.292893),
    fit_moments(Moments(2.0, 3.0)),
]


@pytest.fixture(params=SERVICE_LAWS, ids=repr)
def service_law(request):
    return request.param
