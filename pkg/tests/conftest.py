import pytest

ACCEPTANCE: dict = {}


@pytest.fixture
def report():
    """Record one acceptance line: ``report("C1", ok, detail)``."""

    def record(criterion: str, ok: bool, detail: str = "") -> bool:
        ACCEPTANCE[criterion] = f"{criterion} {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        print(ACCEPTANCE[criterion])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
            terminalreporter.write_line(ACCEPTANCE[key])
