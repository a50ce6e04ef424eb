import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("suite", max_examples=25, deadline=None)
settings.load_profile("suite")

# criterion number -> list of (test name, outcome string)
_ACCEPTANCE: dict[int, list[tuple[str, str]]] = {}
_DESCRIPTIONS: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(num, desc): tags a test as part of an acceptance criterion"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and report.when == "call":
        num, desc = marker.args
        _DESCRIPTIONS[num] = desc
        status = "passed" if report.passed else ("skipped" if report.skipped else "failed")
        _ACCEPTANCE.setdefault(num, []).append((item.name, status))
    elif marker and report.when == "setup" and report.skipped:
        num, desc = marker.args
        _DESCRIPTIONS[num] = desc
        _ACCEPTANCE.setdefault(num, []).append((item.name, "skipped"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        results = _ACCEPTANCE[num]
        skipped = [n for n, s in results if s == "skipped"]
        failed = [n for n, s in results if s == "failed"]
        if failed:
            verdict = "FAIL"
        elif len(skipped) == len(results):
            verdict = "SKIP"
        elif skipped:
            verdict = f"PASS ({len(skipped)} check(s) skipped)"
        else:
            verdict = "PASS"
        detail = f"  ({', '.join(failed)})" if failed else ""
        tr.write_line(f"criterion {num}: {verdict}  {_DESCRIPTIONS[num]}{detail}")
