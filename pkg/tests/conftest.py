"""Shared pytest plumbing for the suite.

The acceptance tests register one human-readable verdict line per
release criterion; emitting them from the terminal-summary hook keeps
them visible in a default (captured) run.
"""

VERDICTS = []


def record_verdict(line: str) -> None:
    VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
