from __future__ import annotations

import numpy as np
import pytest

from conftest import long_records
from trajmsm.data import (
    OutcomeColumn,
    TrajectoryPanel,
    build_panel,
    enumerate_trajectories,
    read_panel_csv,
    trajectory_index,
)
from trajmsm.errors import DomainError, MissingCell, RaggedPanel


def test_complete_two_by_three(records):
    panel = build_panel(records)
    assert (panel.n, panel.K, panel.p, panel.q) == (2, 3, 1, 1)
    assert panel.ids == ("s0", "s1")


def test_missing_cell_names_subject_and_time(records):
    rows = records[~((records.id == "s1") & (records.time == 3))]
    with pytest.raises(MissingCell) as info:
        build_panel(rows)
    assert info.value.context == {"id": "s1", "time": 3}


def test_treatment_two_is_domain_error(records):
    records.loc[4, "A"] = 2
    with pytest.raises(DomainError) as info:
        build_panel(records)
    assert info.value.context["row"] == 4


def test_gap_in_time_values_is_ragged(records):
    with pytest.raises(RaggedPanel):
        build_panel(records[records.time != 2])


def test_single_period_rejected(records):
    with pytest.raises(RaggedPanel):
        build_panel(records[records.time == 1])


def test_duplicate_record(records):
    dup = records.iloc[[0, 1, 2, 3, 4, 5, 0]]
    with pytest.raises(DomainError, match="duplicate"):
        build_panel(dup)


def test_outcome_must_be_constant_within_subject(records):
    records.loc[2, "Y"] = 99.0
    with pytest.raises(DomainError) as info:
        build_panel(records)
    assert info.value.context["row"] == 2


def test_baseline_must_match_first_period(records):
    records.loc[0, "V1"] = 1 - records.loc[0, "L1"]
    records.loc[1, "V1"] = records.loc[0, "V1"]
    records.loc[2, "V1"] = records.loc[0, "V1"]
    with pytest.raises(DomainError, match="subset"):
        build_panel(records)


@pytest.mark.parametrize("outcome", ["continuous", "binary", "survival"])
def test_long_format_round_trip(outcome):
    panel = build_panel(long_records(n=7, K=4, outcome=outcome, seed=3), outcome)
    assert build_panel(panel.to_long(), outcome).equals(panel)


def test_csv_round_trip(tmp_path, sim_panel):
    path = tmp_path / "panel.csv"
    sim_panel.to_long().to_csv(path, index=False)
    assert read_panel_csv(path, "continuous").equals(sim_panel)


def test_malformed_csv_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,time,A,L1,V1,Y\n1,1,0,0,0,1\n1,2,0,0,0,1,7,7\n")
    with pytest.raises(DomainError) as info:
        read_panel_csv(path)
    assert info.value.context["line"] == 3


def test_panel_is_immutable(records):
    panel = build_panel(records)
    with pytest.raises(ValueError):
        panel.treatment[0, 0] = 1


def test_survival_outcome_validation():
    with pytest.raises(DomainError):
        OutcomeColumn("survival", [1.0, -1.0], [1, 0])
    with pytest.raises(DomainError):
        OutcomeColumn("survival", [1.0, 2.0])
    with pytest.raises(DomainError):
        OutcomeColumn("binary", [0.0, 0.5])


def test_single_period_panel_dataclass():
    panel = TrajectoryPanel(("a", "b"), [[0], [1]], np.zeros((2, 1, 1)), np.zeros((2, 1)),
                            OutcomeColumn("continuous", [0.0, 1.0]))
    assert panel.K == 1


@pytest.mark.parametrize("K, count", [(3, 8), (5, 32), (10, 1024)])
def test_enumeration_size(K, count):
    codes = enumerate_trajectories(K)
    assert codes.shape == (count, K)
    assert len({tuple(c) for c in codes}) == count


def test_enumeration_base_case():
    assert enumerate_trajectories(1).tolist() == [[0], [1]]


def test_enumeration_order_matches_index():
    codes = enumerate_trajectories(4)
    assert codes[1].tolist() == [0, 0, 0, 1]
    np.testing.assert_array_equal(trajectory_index(codes), np.arange(16))
