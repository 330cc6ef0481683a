"""
Tests for run directories, reports and the run summary.
"""

import pytest

from hcft.repositories.run_repository import (
    REPORTS_FILE,
    TIMING_FILE,
    RunRepository,
    render_csv,
)
from hcft.schemas.metrics import FrocCurve, FrocPoint
from hcft.schemas.report import RoundReport
from hcft.utils.exceptions import ConfigurationException, DataException


def write_round(repository: RunRepository, t: int, val_auc=None) -> RoundReport:
    repository.start_round("demo", t, "k0 = 1\n")
    report = RoundReport(round=t, val_auc=val_auc, test_auc=0.5, dstar_histogram=[3, 1])
    repository.write_report("demo", t, report)
    repository.write_timing("demo", t, 1.25)
    return report


def test_render_csv():
    """Test floats use repr and None becomes NA."""
    text = render_csv(["a", "b"], [(0.1, None), (1, True)])
    assert text == "a,b\n0.1,NA\n1,true\n"


def test_prepare_and_list(run_repository: RunRepository):
    """Test only directories with a config echo are listed."""
    run_repository.prepare("b", "k0 = 1\n")
    run_repository.prepare("a", "k0 = 2\n")
    (run_repository.runs_dir / "stray").mkdir()
    assert run_repository.list_runs() == ["a", "b"]
    assert run_repository.read_config("a") == {"k0": "2"}


def test_resume_requires_same_echo(run_repository: RunRepository):
    """Test resuming with a different configuration is refused."""
    run_repository.prepare("demo", "k0 = 1\n")
    run_repository.prepare("demo", "k0 = 1\n", resume=True)
    with pytest.raises(ConfigurationException):
        run_repository.prepare("demo", "k0 = 2\n", resume=True)


def test_report_round_trip(run_repository: RunRepository):
    """Test a written report reads back equal."""
    run_repository.prepare("demo", "k0 = 1\n")
    report = write_round(run_repository, 0, val_auc=0.75)
    assert run_repository.read_report("demo", 0) == report
    rows = run_repository.read_report_rows("demo", 0)
    assert rows["val_auc"] == "0.75"
    assert rows["val_acc"] == "NA"
    assert rows["dstar_class_1"] == "1"


def test_summary_has_one_row_per_round(run_repository: RunRepository):
    """Test reports.csv is rebuilt from every completed round."""
    run_repository.prepare("demo", "k0 = 1\n")
    for t in range(3):
        write_round(run_repository, t, val_auc=0.5 + t / 10)
    summary = run_repository.read_summary("demo")
    assert [row["round"] for row in summary] == ["0", "1", "2"]
    assert run_repository.completed_rounds("demo") == [0, 1, 2]


def test_completed_rounds_stop_at_gap(run_repository: RunRepository):
    """Test a round without report.csv ends the completed prefix."""
    run_repository.prepare("demo", "k0 = 1\n")
    write_round(run_repository, 0)
    run_repository.start_round("demo", 1, "k0 = 1\n")
    write_round(run_repository, 2)
    assert run_repository.completed_rounds("demo") == [0]


def test_truncate_after(run_repository: RunRepository):
    """Test truncation drops later reports and timing rows."""
    run_repository.prepare("demo", "k0 = 1\n")
    for t in range(3):
        write_round(run_repository, t)
    run_repository.truncate_after("demo", 0)
    assert run_repository.completed_rounds("demo") == [0]
    assert len(run_repository.read_summary("demo")) == 1
    timing = (run_repository.run_dir("demo") / TIMING_FILE).read_text(encoding="utf-8")
    assert timing == "round,seconds\n0,1.250\n"

    run_repository.truncate_after("demo", -1)
    assert not (run_repository.run_dir("demo") / REPORTS_FILE).exists()


def test_froc_round_trip(run_repository: RunRepository):
    """Test FROC curves are written and read per score source."""
    run_repository.prepare("demo", "k0 = 1\n")
    run_repository.start_round("demo", 0, "k0 = 1\n")
    curve = FrocCurve(
        points=[
            FrocPoint(threshold=0.9, fpi=0.0, sensitivity=0.5),
            FrocPoint(threshold=0.4, fpi=0.5, sensitivity=1.0),
        ],
        n_slides=2,
        n_tumor=2,
    )
    run_repository.write_froc("demo", 0, "mil", curve)
    run_repository.write_froc("demo", 0, "head", None)
    assert run_repository.read_froc("demo", 0, "mil") == curve.points
    assert run_repository.read_froc("demo", 0, "head") == []
    with pytest.raises(DataException):
        run_repository.read_froc("demo", 0, "attention")


def test_heatmap_filters_slide(run_repository: RunRepository):
    """Test heatmap rows are limited to one slide."""
    run_repository.prepare("demo", "k0 = 1\n")
    run_repository.start_round("demo", 0, "k0 = 1\n")
    run_repository.write_confidence(
        "demo",
        0,
        [("bag00000", 0, 0.7, 0.9, 0.63, 0), ("bag00001", 0, 1.0, 0.2, 0.2, 0)],
    )
    rows = run_repository.read_heatmap("demo", 0, "bag00000")
    assert len(rows) == 1
    assert rows[0].score == 0.63
    assert run_repository.read_heatmap("demo", 0, "missing") == []


def test_missing_report(run_repository: RunRepository):
    """Test reading an absent report raises a data error."""
    run_repository.prepare("demo", "k0 = 1\n")
    with pytest.raises(DataException):
        run_repository.read_report("demo", 4)
