"""Shared pytest hooks.

Acceptance checks call ``record(...)``; the collected lines are printed in
the terminal summary so the pass/fail status of every criterion appears in
the test log regardless of output capturing.
"""
ACCEPTANCE_LINES: dict = {}


def record(number: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
