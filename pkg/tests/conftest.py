import re

import pytest

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = re.search(r"test_criterion_(\d+)_", item.name)
    if m is None or "test_acceptance" not in item.nodeid:
        return
    n = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        props = dict(report.user_properties)
        _ACCEPTANCE[n] = ("PASS" if report.passed else "FAIL", item.name, props.get("detail", ""),
                          props.get("table", ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, name, detail, table = _ACCEPTANCE[n]
        line = f"criterion {n:2d}: {status}  {name}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
    tables = [(n, v[3]) for n, v in sorted(_ACCEPTANCE.items()) if v[3]]
    for n, table in tables:
        terminalreporter.write_line("")
        terminalreporter.write_line(f"criterion {n} table:")
        for row in table.splitlines():
            terminalreporter.write_line("  " + row)
