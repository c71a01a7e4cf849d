import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dgmeit.inverse import ForwardOperator
from dgmeit.mesh import build_disk_mesh

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def mesh():
    return build_disk_mesh()


@pytest.fixture(scope="session")
def operator(mesh):
    return ForwardOperator(mesh)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion

_criteria: dict[int, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when == "teardown":
        return
    number, title = mark.args
    if call.when == "setup" and call.excinfo is None:
        return
    entry = _criteria.setdefault(number, (title, []))
    entry[1].append("FAIL" if call.excinfo is not None else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, outcomes = _criteria[number]
        status = "PASS" if outcomes and all(o == "PASS" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {status}  {title}")
