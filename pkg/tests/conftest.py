import json
from pathlib import Path

import pytest

from horizon_limit.ladder import build_ladder, extract_limit_path
from horizon_limit.problem import geodesic, ramsey
from horizon_limit.solver import SolverOptions

FIXTURES = Path(__file__).parent / "fixtures"

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    ok = rep.passed if rep.when == "call" else not rep.failed
    prev = _criteria.get(num, (title, True))
    _criteria[num] = (title, prev[1] and ok)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_criteria):
        title, ok = _criteria[num]
        tr.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture(scope="session")
def derived():
    return json.loads((FIXTURES / "derived.json").read_text())


@pytest.fixture(scope="session")
def geo():
    return geodesic(5.0)


@pytest.fixture(scope="session")
def ram():
    return ramsey(r=0.05, k0=10.0)


@pytest.fixture(scope="session")
def geo_ladder(geo):
    return build_ladder(geo, 5.0, 2.0, 4, SolverOptions(nodes=100))


@pytest.fixture(scope="session")
def geo_limit(geo_ladder):
    return extract_limit_path(geo_ladder, 0.5, 1e-8)


@pytest.fixture(scope="session")
def ram_ladder(ram):
    return build_ladder(ram, 5.0, 2.0, 4, SolverOptions(nodes=100))
