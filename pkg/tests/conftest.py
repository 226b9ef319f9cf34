"""Shared pytest wiring.

The acceptance tests are named test_criterion_<n>_<slug>; this hook turns
their outcomes into one summary line per criterion at the end of the run
so the pass/fail state of each criterion is visible at a glance.
"""

_criteria: dict[str, str] = {}


def pytest_runtest_logreport(report):
    nodeid = report.nodeid
    if "test_acceptance.py::test_criterion_" not in nodeid:
        return
    name = nodeid.split("::test_", 1)[1].split("[")[0]
    if report.when == "call":
        _criteria[name] = "PASS" if report.passed else "FAIL"
    elif report.failed:  # setup/teardown error counts as a failure
        _criteria[name] = "FAIL"
    elif report.skipped:
        _criteria.setdefault(name, "SKIP")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        terminalreporter.write_line(f"{name.replace('_', ' ')}: {_criteria[name]}")
