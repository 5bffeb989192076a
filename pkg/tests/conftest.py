import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Scoreboard for the pipeline gate: one pass/fail line per guarantee."""
    outcomes = {}
    for key in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::" not in nodeid:
                continue
            name = nodeid.split("::")[-1].split("[")[0]
            verdict = "PASS" if key == "passed" else (
                "SKIP" if key == "skipped" else "FAIL")
            if outcomes.get(name) != "FAIL":
                outcomes[name] = verdict
    if not outcomes:
        return
    try:
        from test_acceptance import GATE
    except ImportError:
        return
    terminalreporter.section("acceptance gate")
    for name, label in GATE:
        terminalreporter.write_line(
            f"{outcomes.get(name, 'NOT RUN'):7s} {label}")
