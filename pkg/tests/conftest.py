"""Per-criterion verdicts for the acceptance suite.

Tests carry ``@pytest.mark.criterion(n, "name")``; a criterion passes when
every test tagged with it passes.  Values stored with ``record_property``
are echoed next to the verdict in the terminal summary.
"""

import pytest

_verdicts: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, name): acceptance criterion exercised by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    # a setup error counts against the criterion; otherwise the call phase decides
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        n, name = mark.args
        entry = _verdicts.setdefault(n, {"name": name, "ok": True, "notes": []})
        entry["ok"] = entry["ok"] and rep.passed
        entry["notes"].extend(f"{k}={v}" for k, v in item.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_verdicts):
        v = _verdicts[n]
        notes = "  " + " ".join(v["notes"]) if v["notes"] else ""
        terminalreporter.write_line(f"ACCEPTANCE {n:>2} {v['name']}: {'PASS' if v['ok'] else 'FAIL'}{notes}")
