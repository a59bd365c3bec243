import pytest

_OUTCOMES = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_OUTCOMES] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    entry = item.config.stash[_OUTCOMES].setdefault(
        mark.args[0], {"passed": 0, "failed": 0, "skipped": 0, "notes": []})
    if report.failed:
        entry["failed"] += 1
    elif report.skipped:
        entry["skipped"] += 1
    elif report.when == "call":
        entry["passed"] += 1
    if report.when == "call":
        entry["notes"] += [v for k, v in item.user_properties if k == "summary"]


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_OUTCOMES]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        r = results[n]
        status = "FAIL" if r["failed"] else "PASS" if r["passed"] else "SKIP"
        notes = list(r["notes"])
        if r["skipped"] and status != "SKIP":
            notes.append(f"{r['skipped']} optional variant(s) skipped")
        terminalreporter.write_line(f"criterion {n}: {status}" + (f" [{'; '.join(notes)}]" if notes else ""))
