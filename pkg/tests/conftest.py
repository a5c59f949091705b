from tests import report


def pytest_terminal_summary(terminalreporter):
    rows = report.lines()
    if rows:
        terminalreporter.section("acceptance criteria")
        for row in rows:
            terminalreporter.write_line(row)
