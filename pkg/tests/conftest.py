import time

import pytest

from pufauth.harness import ExperimentPlan, run_sweep


@pytest.fixture(scope="session")
def default_sweep(tmp_path_factory):
    """The full default sweep (6 devices x 45 iterations), run once per session."""
    out = tmp_path_factory.mktemp("default_sweep")
    t0 = time.perf_counter()
    result = run_sweep(ExperimentPlan(), out)
    result.elapsed = time.perf_counter() - t0
    return result


@pytest.fixture
def verdict(request):
    """Print and remember one PASS/FAIL line for an acceptance criterion."""

    def emit(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
        print(line)
        request.config.stash.setdefault(_LINES, []).append(line)
        return ok

    return emit


_LINES = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
