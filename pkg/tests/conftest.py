import pytest

# criterion number -> (passed, detail); filled by the acceptance tests
CRITERIA: dict = {}


@pytest.fixture
def criterion():
    def record(number: int, checks: dict, detail: str = ""):
        ok = all(bool(v) for v in checks.values())
        failed = [k for k, v in checks.items() if not v]
        CRITERIA[number] = (ok, detail + (f" failed: {', '.join(failed)}" if failed else ""))
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} {CRITERIA[number][1]}")
        assert ok, f"criterion {number} failed sub-checks {failed}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        ok, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
