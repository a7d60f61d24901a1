"""Collects acceptance outcomes and prints one line per criterion at the end of the run."""

ACCEPTANCE: dict[str, dict] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    ACCEPTANCE[name] = {"passed": report.passed, "seconds": report.duration}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        r = ACCEPTANCE[name]
        status = "PASS" if r["passed"] else "FAIL"
        terminalreporter.write_line(f"{status} {name} ({r['seconds']:.2f} s)")
