"""Shared pytest hooks.

The acceptance tests append one verdict line per criterion to
ACCEPTANCE_LINES; the terminal-summary hook echoes them after the run
so the pass/fail ledger is visible even with captured output.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
