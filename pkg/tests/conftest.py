"""Shared pytest plumbing: the acceptance-criteria summary block."""

ACCEPTANCE_LINES: list[str] = []


def record_criterion(line: str) -> None:
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "training: runs real training loops (minutes, not seconds)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
