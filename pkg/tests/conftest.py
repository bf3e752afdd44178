import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vnlw.field_core import make_grid, random_bandlimited_field

settings.register_profile(
    "vnlw", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("vnlw")


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


@pytest.fixture
def grid2():
    return make_grid(2, 32, 6.0)


@pytest.fixture
def band_field(grid2, rng):
    return random_bandlimited_field(grid2, 4.0, rng)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict_line(request):
    """Record one PASS/FAIL line for the terminal summary."""

    def record(label, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} {label}: {detail}"
        request.config.stash.setdefault(ACCEPTANCE_KEY, []).append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
