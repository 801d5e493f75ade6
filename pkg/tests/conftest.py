import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class Criterion:
    """Collects the checks of one acceptance criterion into a single
    PASS/FAIL line."""

    def __init__(self, name, sink):
        self.name = name
        self.sink = sink
        self.failures = []
        self.details = []
        self.finished = False

    def check(self, ok, detail):
        self.details.append(detail)
        if not ok:
            self.failures.append(detail)
        return ok

    def finish(self):
        self.finished = True
        status = "FAIL" if self.failures else "PASS"
        shown = self.failures if self.failures else self.details
        line = f"{status}  {self.name}: " + "; ".join(shown)
        self.sink.append(line)
        print(line)
        assert not self.failures, line


@pytest.fixture
def criterion(request):
    made = []

    def make(name):
        c = Criterion(name, request.config.stash[_CRITERIA])
        made.append(c)
        return c

    yield make
    for c in made:
        if not c.finished:
            c.sink.append(f"FAIL  {c.name}: did not complete (see traceback)")


def pytest_configure(config):
    config.stash[_CRITERIA] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
