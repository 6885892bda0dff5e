"""Acceptance bookkeeping: one PASS/FAIL line per criterion at the end of the run."""

from collections import defaultdict

import pytest

_RESULTS: dict[int, list[tuple[str, str, str]]] = defaultdict(list)


@pytest.fixture
def detail(request):
    """Attach a short measurement string to the acceptance summary line."""
    def note(text: str) -> None:
        request.node.user_properties.append(("detail", text))
    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        notes = "; ".join(v for k, v in item.user_properties if k == "detail")
        _RESULTS[marker.args[0]].append((item.name, report.outcome, notes))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_RESULTS):
        items = _RESULTS[crit]
        ok = all(outcome == "passed" for _, outcome, _ in items)
        passed = sum(outcome == "passed" for _, outcome, _ in items)
        tr.write_line(f"criterion {crit:>2}: {'PASS' if ok else 'FAIL'} ({passed}/{len(items)} checks)")
        for name, outcome, notes in items:
            if outcome != "passed" or notes:
                tr.write_line(f"    {outcome.upper():<6} {name}" + (f"  [{notes}]" if notes else ""))
