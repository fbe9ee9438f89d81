import json
from importlib import resources

import pytest

from borelog_sta import security
from borelog_sta.store import Store

_criterion_labels = {}
_criterion_outcomes = {}


def load_fixture(name: str):
    return json.loads((resources.files("borelog_sta") / "fixtures" / name).read_text())


@pytest.fixture
def store():
    s = Store()
    s.bootstrap("admin", "admin")
    return s


@pytest.fixture
def admin(store):
    return security.authenticate(store.graph, "admin", "admin")


@pytest.fixture
def loaded_store(store, admin):
    store.batch_create(load_fixture("odot_b001.json")["batch"], principal=admin)
    return store


@pytest.fixture
def acceptance(request):
    """Labels the running test as one acceptance criterion.

    The terminal summary then prints one PASS/FAIL line per labelled test.
    """

    def label(text: str):
        _criterion_labels[request.node.nodeid] = text

    return label


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and item.nodeid in _criterion_labels:
        _criterion_outcomes[item.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_labels:
        return
    terminalreporter.section("acceptance criteria")
    lines = []
    for nodeid, label in _criterion_labels.items():
        outcome = _criterion_outcomes.get(nodeid, "failed")
        lines.append(f"{label}: {'PASS' if outcome == 'passed' else 'FAIL'}")
    for line in sorted(lines):
        terminalreporter.write_line(line)
