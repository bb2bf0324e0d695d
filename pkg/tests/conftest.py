import json
import os

import pytest

# criterion number -> title
TITLES = {
    1: "drift-rate equivalence",
    2: "energy law",
    3: "one-bath no-work",
    4: "work-vs-heat separation",
    5: "state ordering",
    6: "phase-averaged threshold",
    7: "second law",
    8: "beyond-Carnot regime",
    9: "effective-temperature formula",
    10: "unit/property suites",
}

_outcomes = {}  # criterion -> list of (test name, passed)
_details = {}  # criterion -> list of measured values
_invariants = {}  # nodeid -> passed, for tests marked invariant


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion n")
    config.addinivalue_line("markers", "invariant: module invariant or property test")


@pytest.fixture
def measured(request):
    """Record a measured value against the test's acceptance criterion."""
    mark = request.node.get_closest_marker("criterion")

    def record(text):
        if mark is not None:
            _details.setdefault(mark.args[0], []).append(text)

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.get_closest_marker("invariant") is not None and (rep.when == "call" or not rep.passed):
        _invariants[item.nodeid] = _invariants.get(item.nodeid, True) and rep.passed
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes.setdefault(mark.args[0], []).append((item.name, rep.passed))


def pytest_sessionfinish(session):
    path = os.environ.get("OPTOHEAT_INVARIANT_REPORT")
    if path:
        with open(path, "w") as fh:
            json.dump(_invariants, fh, indent=1)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(TITLES):
        results = _outcomes.get(n)
        if not results:
            continue
        ok = all(p for _, p in results)
        failed = [name for name, p in results if not p]
        line = f"criterion {n:>2} {TITLES[n]:<30} {'PASS' if ok else 'FAIL'}"
        if _details.get(n):
            line += "  [" + "; ".join(_details[n]) + "]"
        if failed:
            line += "  failing: " + ", ".join(failed)
        tr.write_line(line)

