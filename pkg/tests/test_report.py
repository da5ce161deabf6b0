import csv
import json

import pytest

from srgaze import report


def fake_report(experiment_id="exp-a", preprocess="interpolate", pct=None, ref=None):
    return {
        "experiment_id": experiment_id,
        "pipeline": {"preprocess": preprocess},
        "folds": [
            {"subject": "s00", "pog_best": 4.0, "pog_final": 4.5,
             "test_pog_curve": [6.0, 5.0, 4.0], "train_loss_curve": [0.3, 0.2, 0.1]},
            {"subject": "s01", "pog_best": 5.0, "pog_final": 5.0,
             "test_pog_curve": [7.0, 6.0, 5.0], "train_loss_curve": [0.3, 0.2, 0.1]},
        ],
        "mean_pog": 4.5, "mean_pog_best": 4.5, "mean_pog_final": 4.75,
        "reference": {"fraction_pct": pct, "full_scale_pog_deg": ref},
    }


def test_csv_columns_and_reference_passthrough(tmp_path):
    out = tmp_path / "summary.csv"
    report.reports_to_csv([fake_report(pct=20, ref=4.54)], out)
    with open(out) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 1
    assert rows[0]["preprocess"] == "interpolate"
    assert rows[0]["fraction_pct"] == "20"
    assert rows[0]["mean_pog_deg"] == "4.5000"
    assert rows[0]["reference_full_scale_pog_deg"] == "4.54"
    assert rows[0]["n_folds"] == "2"


def test_markdown_has_row_per_report():
    md = report.reports_to_markdown([fake_report("exp-a"), fake_report("exp-b")])
    lines = md.strip().splitlines()
    assert len(lines) == 4  # header + separator + 2 rows
    assert "exp-a" in lines[2] and "exp-b" in lines[3]


def test_render_report_dir_end_to_end(tmp_path):
    rdir = tmp_path / "reports"
    rdir.mkdir()
    (rdir / "exp-a.json").write_text(json.dumps(fake_report("exp-a")))
    out = tmp_path / "rendered"
    summary = report.render_report_dir(rdir, out)
    assert summary.is_file()
    assert (out / "summary.csv").is_file()
    assert (out / "exp-a.png").stat().st_size > 0


def test_render_empty_dir_rejected(tmp_path):
    (tmp_path / "reports").mkdir()
    with pytest.raises(ValueError, match="no report"):
        report.render_report_dir(tmp_path / "reports", tmp_path / "out")


def test_plot_shift_histogram(tmp_path):
    probe = {"mean_shift_deg": 2.0, "centering_score": 0.1,
             "shift_histogram": {"bin_edges_deg": [0, 5, 10], "counts": [3, 1]}}
    out = tmp_path / "hist.png"
    report.plot_shift_histogram(probe, out)
    assert out.stat().st_size > 0
