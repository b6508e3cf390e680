"""Shared pytest plumbing: the acceptance suite reports one PASS/FAIL line per criterion."""

ACCEPTANCE_RESULTS = {}


def record(number: int, title: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS[number] = (title, bool(passed), detail)
    status = "PASS" if passed else "FAIL"
    print(f"\n[acceptance {number:2d}] {status}  {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
