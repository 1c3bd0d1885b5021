import sys
from dataclasses import dataclass, field
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@dataclass
class Criterion:
    number: int
    title: str
    passed: bool = False
    notes: list = field(default_factory=list)

    def note(self, text: str) -> None:
        """Attach a measured figure to the summary line (call before asserting)."""
        self.notes.append(text)


_RESULTS = {}


@pytest.fixture
def criterion(request):
    number, title = request.node.get_closest_marker("acceptance").args
    rec = _RESULTS.setdefault(number, Criterion(number, title))
    rec.notes.clear()
    return rec


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    rec = _RESULTS.setdefault(number, Criterion(number, title))
    if report.failed:
        rec.passed = False
    elif report.when == "call":
        rec.passed = True


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        rec = _RESULTS[number]
        status = "PASS" if rec.passed else "FAIL"
        line = f"{status}  criterion {number:>2}: {rec.title}"
        if rec.notes:
            line += "  (" + "; ".join(rec.notes) + ")"
        terminalreporter.write_line(line)
