import re

# criterion number -> {"name", "outcome", "seconds", "details"}
_CRITERIA = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    entry = _CRITERIA.setdefault(
        int(m.group(1)), {"name": m.group(2).replace("_", " "), "outcome": "passed", "seconds": 0.0, "details": []}
    )
    entry["seconds"] += report.duration
    if report.failed:
        entry["outcome"] = "failed"
    elif getattr(report, "wasxfail", None) is not None and report.skipped and entry["outcome"] == "passed":
        entry["outcome"] = "xfailed"
    detail = dict(report.user_properties).get("detail")
    if report.when == "call" and detail:
        entry["details"].append(detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    labels = {"passed": "PASS", "failed": "FAIL", "xfailed": "FAIL (known, see decisions ledger)"}
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        details = " | ".join(e["details"])
        terminalreporter.write_line(
            f"criterion {n:2d} {e['name']}: {labels[e['outcome']]} ({e['seconds']:.1f} s){' ' + details if details else ''}"
        )
