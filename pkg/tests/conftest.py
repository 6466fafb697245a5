import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line: ``verdict(criterion, passed, detail)``."""
    lines = request.config.stash[_VERDICTS]

    def record(criterion, passed, detail):
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_VERDICTS]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
