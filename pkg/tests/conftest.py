"""Collects acceptance outcomes and prints one line per criterion at the end of the run."""

ACCEPTANCE = {}


def record(key, ok, detail):
    ACCEPTANCE[key] = (ok, detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(str(k).split("-")[0]), str(k))):
        ok, detail = ACCEPTANCE[key]
        status = {True: "PASS", False: "FAIL", None: "INFO"}[ok]
        tr.write_line(f"criterion {key}: {status}  {detail}")
