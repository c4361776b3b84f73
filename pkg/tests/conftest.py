from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

TESTS = Path(__file__).parent
FIXTURES = TESTS / "fixtures"
sys.path.insert(0, str(TESTS))


@pytest.fixture(scope="session")
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def registry_doc() -> dict:
    return json.loads((FIXTURES / "registry.json").read_text())


@pytest.fixture(scope="session")
def fixture_graph(registry_doc):
    from sgxsupply.registry import load_registry

    return load_registry(registry_doc)


@pytest.fixture(scope="session")
def ported_names() -> list[str]:
    return (FIXTURES / "ported.txt").read_text().split()


@pytest.fixture(scope="session")
def ranked_names() -> list[str]:
    return (FIXTURES / "ranked.txt").read_text().split()


# One summary line per acceptance criterion, in criterion order.
_criteria: dict[int, tuple[str, bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    _criteria[number] = (title, report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}")
