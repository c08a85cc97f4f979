import os

import pytest

# criterion number -> (title, status, detail); filled in by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str, str]] = {}

SLOW = os.environ.get("QMOTIF_SLOW") == "1"


def pytest_collection_modifyitems(config, items):
    if SLOW:
        return
    skip = pytest.mark.skip(reason="long stochastic run; set QMOTIF_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, status, detail = ACCEPTANCE[k]
        tr.write_line(f"criterion {k} [{status}] {title}: {detail}")
