import pytest

# one human-readable verdict per delivery criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    setattr(item, "rep_" + rep.when, rep)


@pytest.fixture
def criterion(request):
    """Record a one-line verdict for a numbered delivery criterion.

    Tests call the fixture early with a base label and may call it again with
    a more detailed line once the numbers are known; PASS/FAIL is taken from
    the test's own outcome.
    """
    note = {}

    def record(num: int, text: str) -> None:
        note["num"], note["text"] = num, text

    yield record
    rep = getattr(request.node, "rep_call", None)
    if "num" in note and rep is not None:
        status = "PASS" if rep.passed else "FAIL"
        ACCEPTANCE_LINES.append(f"criterion {note['num']:>2}: {status}  {note['text']}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


class FakeClock:
    """Manually advanced clock for unit tests."""

    def __init__(self, t: float = 1_600_000_000.0):
        self.t = t

    def now(self) -> float:
        return self.t

    def advance(self, dt: float) -> None:
        self.t += dt


@pytest.fixture
def clock():
    return FakeClock()
