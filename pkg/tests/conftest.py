"""Collects one verdict line per acceptance criterion and prints them after the run."""

import re

_VERDICTS: dict[str, tuple[str, str]] = {}
_CRITERION = re.compile(r"test_ac(\d+)_")


def pytest_runtest_logreport(report):
    match = _CRITERION.search(report.nodeid)
    if not match or "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        verdict = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _VERDICTS[f"AC{match.group(1)}"] = (verdict, detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_VERDICTS, key=lambda k: int(k[2:])):
        verdict, detail = _VERDICTS[key]
        terminalreporter.write_line(f"{key:<5} {verdict}  {detail}")
