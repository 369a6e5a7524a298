import numpy as np
import pytest

from tvamplan.geometry import make_disk
from tvamplan.projector import ProjectionGeometry


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_disk():
    return make_disk(16)


@pytest.fixture(scope="session")
def small_pg():
    return ProjectionGeometry(16, 12)


ACCEPTANCE_LINES = []


@pytest.fixture
def report(request):
    """Record and print one pass/fail line for an acceptance criterion."""

    def _report(label: str, ok: bool, detail: str = ""):
        line = f"{label}: {'PASS' if ok else 'FAIL'}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        capman = request.config.pluginmanager.getplugin("capturemanager")
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
