"""Shared pytest hooks: collect the acceptance PASS/FAIL lines and print
them in a summary section so they survive output capture."""

ACCEPTANCE_LINES = []


def record_line(line: str):
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
