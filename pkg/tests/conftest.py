_CRITERION_LINES = []


def record_criterion(number: int, description: str, passed: bool, detail: str = ""):
    """Collect one pass/fail line per acceptance criterion for the summary."""
    status = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    line = f"criterion {number:2d} {status}: {description}{suffix}"
    _CRITERION_LINES.append((number, line))
    return passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERION_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for _, line in sorted(_CRITERION_LINES):
        terminalreporter.write_line(line)
