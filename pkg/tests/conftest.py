import warnings

import pytest

from onestep.model import NearBoundaryWarning

_RESULTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS] = []
    warnings.simplefilter("ignore", NearBoundaryWarning)


@pytest.fixture
def record_criterion(request):
    """Store (number, title, passed, detail) for the end-of-run summary."""
    def record(number, title, passed, detail):
        request.config.stash[_RESULTS].append((number, title, bool(passed), detail))
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(results, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
