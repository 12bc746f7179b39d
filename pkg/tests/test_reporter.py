import csv
import math

import numpy as np
import pytest

from core.contracts import case_scores_to_ui, prediction_to_ui, report_to_ui
from runners.reporter import run_reporter
from tools.plot_tools import plot_dsc_boxplot, plot_jsd_heatmap
from tools.reporter_tools import (
    ExperimentReport,
    build_markdown_report,
    load_report,
    read_jsd_matrix,
    write_jsd_matrix,
)


@pytest.fixture
def report():
    r = ExperimentReport(
        organ_names=["liver", "spleen"],
        variants=["lower_bound", "darr"],
        case_ids=["t0", "t1"],
        created="2024-01-01T00:00:00Z",
    )
    r.dsc = {
        "lower_bound": {"t0": [0.5, 0.7], "t1": [0.7, 0.9]},
        "darr": {"t0": [0.8, 0.8], "t1": [0.9, 0.7]},
    }
    r.adaptation = {
        "darr": {
            "t0": {"iterations": 30, "trajectory": [2.1, 2.0], "loss_before": 2.2, "loss_after": 1.9,
                   "fallback": False, "message": ""},
            "t1": {"iterations": 30, "trajectory": [], "loss_before": 2.2, "loss_after": None,
                   "fallback": True, "message": "non-finite puzzle loss at adaptation iteration 1; rolled back"},
        }
    }
    r.jsd = np.array([[0.01, 0.6], [np.nan, 0.02]])
    return r


def test_means_are_recomputed_from_cases(report):
    assert report.per_organ_means("lower_bound") == pytest.approx([0.6, 0.8])
    assert report.variant_mean("darr") == pytest.approx(0.8)
    assert report.case_mean("lower_bound", "t1") == pytest.approx(0.8)
    assert report.fallbacks("darr") == ["t1"]
    assert report.puzzle_improvements("darr") == 1


def test_run_reporter_writes_every_artifact(tmp_path, report):
    result = run_reporter(report, tmp_path)
    for name in ("report.json", "dsc_per_case.csv", "variant_means.csv", "jsd_matrix.csv", "report.md"):
        assert (tmp_path / name).exists(), name
    with open(tmp_path / "variant_means.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    darr = next(r for r in rows if r["variant"] == "darr")
    assert float(darr["mean"]) == pytest.approx(0.8)
    assert darr["fallbacks"] == "1"
    assert "DARR vs lower bound" in result["report_md"]


def test_report_json_round_trip_keeps_nan(tmp_path, report):
    run_reporter(report, tmp_path)
    back = load_report(tmp_path / "report.json")
    assert back.dsc == report.dsc
    assert math.isnan(back.jsd[1, 0])
    assert back.jsd[0, 1] == pytest.approx(0.6)


def test_jsd_csv_round_trip(tmp_path, report):
    path = write_jsd_matrix(report.jsd, report.organ_names, tmp_path / "jsd.csv")
    matrix, names = read_jsd_matrix(path)
    assert names == ["liver", "spleen"]
    np.testing.assert_allclose(matrix, report.jsd, atol=1e-6)


def test_markdown_mentions_fallbacks_and_tables(report):
    md = build_markdown_report(report)
    assert "## Mean DSC (%)" in md
    # best value per column is bold, ties included
    assert "| Lower Bound | 60.00 | **80.00** | 70.00 |" in md
    assert "| DARR | **85.00** | 75.00 | **80.00** |" in md
    assert "Puzzle loss reduced in 1/2 case(s)" in md
    assert "Fallback to the unadapted model: t1" in md
    assert "n/a" in md


def test_ui_contracts(report):
    rows, summary = report_to_ui(report.to_dict())
    assert [r["variant"] for r in rows] == ["lower_bound", "darr"]
    assert rows[1]["mean"] == pytest.approx(80.0)
    assert rows[1]["puzzle_improved"] == "1/2"
    assert summary["best_variant"] == "darr"
    assert summary["darr_gain"] == pytest.approx(10.0)
    assert summary["any_fallback"] is True
    assert report_to_ui({}) == ([], {})

    per_case = case_scores_to_ui(report.to_dict(), "t1")
    assert {r["variant"]: r["fallback"] for r in per_case} == {"lower_bound": False, "darr": True}

    payload = prediction_to_ui("t0", "darr", [0.8, 0.6], ["liver", "spleen"], report.adaptation["darr"]["t0"])
    assert payload["dsc"] == {"liver": 80.0, "spleen": 60.0}
    assert payload["mean_dsc"] == pytest.approx(70.0)
    assert payload["trajectory"] == [2.1, 2.0]


def test_plots_are_written(tmp_path, report):
    assert plot_dsc_boxplot(report, tmp_path / "box.png").stat().st_size > 0
    assert plot_jsd_heatmap(report.jsd, report.organ_names, tmp_path / "heat.png").stat().st_size > 0


def test_markdown_bolds_tied_best_values(report):
    report.dsc["darr"] = {"t0": [0.5, 0.7], "t1": [0.7, 0.9]}
    md = build_markdown_report(report)
    assert "| Lower Bound | **60.00** | **80.00** | **70.00** |" in md
    assert "| DARR | **60.00** | **80.00** | **70.00** |" in md
