"""Collects acceptance outcomes and prints one line per criterion at the end of the run."""

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        n = props["criterion"]
        ok, title, notes = _CRITERIA.get(n, (True, props["title"], []))
        ok = ok and report.passed
        if "measured" in props:
            notes = notes + [props["measured"]]
        _CRITERIA[n] = (ok, title, notes)


def pytest_runtest_setup(item):
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        item.user_properties.append(("criterion", mark.args[0]))
        item.user_properties.append(("title", mark.args[1]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, title, notes = _CRITERIA[n]
        extra = f" ({'; '.join(notes)})" if notes else ""
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title}{extra}")
