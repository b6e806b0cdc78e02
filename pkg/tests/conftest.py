import numpy as np
import pytest

from twostepda import autodiff as ad


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def f64():
    with ad.precision(np.float64):
        yield


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(_ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
