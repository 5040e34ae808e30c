"""Collect the one-line verdicts printed by the acceptance tests into the terminal summary."""

_verdicts = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        for line in report.capstdout.splitlines():
            if line.startswith(("[PASS]", "[FAIL]")):
                _verdicts.append(line)


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in _verdicts:
            terminalreporter.write_line(line)
