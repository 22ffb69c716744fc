import pytest

# one "CRITERION n ... PASS/FAIL" line per acceptance check, echoed at the end
ACCEPTANCE_LINES = []


class _Recorder:
    def __init__(self, number, title):
        self.number, self.title, self.done = number, title, False

    def result(self, ok, detail=""):
        line = f"CRITERION {self.number:>2} {self.title}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f" ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        self.done = True
        return ok


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    rec = _Recorder(*marker.args)
    yield rec
    if not rec.done:
        rec.result(False, "raised before completing")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
