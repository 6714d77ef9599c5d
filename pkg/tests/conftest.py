import numpy as np
import pytest

from hscfate import ModelSpec, PopulationState, RateVector, simulate_path

MODELS = ("SCD", "SCDAs", "SCDAp", "SDAsAp", "CDAsAp")


def random_rates(spec, rng, scale=0.3):
    arr = rng.uniform(0.05, scale, 5) * spec.active_mask()
    return RateVector.from_array(arr)


def random_path(spec, rng, horizon=10.0, initial=PopulationState(3, 2, 2, 1), scale=0.3):
    """A feasible path drawn from the model itself at random rates."""
    return simulate_path(random_rates(spec, rng, scale), spec, initial, horizon, rng)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(params=MODELS)
def spec(request):
    return ModelSpec.from_name(request.param)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list = []


def report(number: int, passed: bool | None, detail: str) -> bool:
    """Record one acceptance line; ``passed=None`` marks a skipped criterion."""
    status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
    line = f"criterion {number:>2}: {status}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
