"""Collects the acceptance outcomes and prints one PASS/FAIL line per criterion."""

import re

_CRITERION = re.compile(r"test_acceptance\.py::test_c(\d)_(\w+)")
_outcomes: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m or (report.when != "call" and report.passed):
        return
    number, name = int(m.group(1)), m.group(2).replace("_", " ")
    previous = _outcomes.get(number, (name, "PASS"))[1]
    status = "PASS" if report.passed and previous == "PASS" else "FAIL"
    _outcomes[number] = (name, status)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        name, status = _outcomes[number]
        terminalreporter.write_line(f"C{number} {name}: {status}")
