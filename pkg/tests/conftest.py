from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from trajmsm.simulation import ScenarioConfig, generate_panel


def long_records(n=2, K=3, outcome="continuous", seed=0):
    """Small complete long-format frame for data-model tests."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        l1 = int(rng.integers(0, 2))
        y = float(rng.normal())
        for t in range(1, K + 1):
            row = {"id": f"s{i}", "time": t, "A": int(rng.integers(0, 2)),
                   "L1": l1 if t == 1 else int(rng.integers(0, 2)), "V1": l1}
            if outcome == "survival":
                row["time_to_event"], row["event"] = 1.0 + i, 1
            else:
                row["Y"] = y if outcome == "continuous" else i % 2
            rows.append(row)
    return pd.DataFrame(rows)


@pytest.fixture
def records():
    return long_records()


@pytest.fixture(scope="session")
def sim_panel():
    cfg = ScenarioConfig(outcome="continuous", K=3, J=3, n=1000, replicates=1, seed=11)
    return generate_panel(cfg, np.random.SeedSequence([11, 0]))


#: criterion number -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {k}: {detail}")
