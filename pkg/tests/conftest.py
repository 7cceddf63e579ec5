"""Shared fixtures and the acceptance-criteria summary hook."""

from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from nutrimap.data import HouseholdFrame
from nutrimap.spatial import build_graph

# Acceptance results collected by tests/test_acceptance.py. Each entry is
# (criterion label, passed, detail); the terminal-summary hook prints one
# PASS/FAIL line per criterion at the end of the run.
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record_criterion(label: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((label, bool(passed), detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in ACCEPTANCE_RESULTS:
        line = f"{'PASS' if passed else 'FAIL'}  {label}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def path3_graph():
    return build_graph({"A": ["B"], "B": ["A", "C"], "C": ["B"]})


@pytest.fixture(scope="session")
def small_frame():
    """Three areas (one single-cluster), two ADM1s, mixed strata."""
    rows = [
        # household, cluster, adm1, adm2, stratum, weight, y
        ("h01", "c1", "north", "A", "rural", 1.0, 1.0),
        ("h02", "c1", "north", "A", "rural", 1.0, 0.0),
        ("h03", "c2", "north", "A", "rural", 2.0, 1.0),
        ("h04", "c2", "north", "A", "rural", 1.0, 0.0),
        ("h05", "c3", "north", "B", "urban", 1.5, 1.0),
        ("h06", "c3", "north", "B", "urban", 0.5, 0.0),
        ("h07", "c4", "north", "B", "urban", 1.0, 0.0),
        ("h08", "c5", "south", "C", "rural", 1.0, 1.0),
        ("h09", "c5", "south", "C", "rural", 2.0, 0.0),
        ("h10", "c5", "south", "C", "rural", 1.0, 1.0),
        ("h11", "c6", "south", "D", "rural", 1.0, 0.0),
        ("h12", "c6", "south", "D", "rural", 1.0, 1.0),
        ("h13", "c7", "south", "D", "urban", 2.0, 0.0),
    ]
    df = pd.DataFrame(
        rows,
        columns=("household_id", "cluster_id", "adm1_id", "adm2_id", "stratum", "weight", "y"),
    )
    return HouseholdFrame.from_dataframe(df)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
