"""Render experiment reports as markdown tables, CSV, and static PNG plots."""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load_reports(reports_dir):
    reports = []
    for path in sorted(Path(reports_dir).glob("*.json")):
        reports.append(json.loads(path.read_text()))
    return reports


def reports_to_csv(reports, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["experiment_id", "preprocess", "fraction_pct",
                         "mean_pog_deg", "mean_pog_best_deg", "mean_pog_final_deg",
                         "reference_full_scale_pog_deg", "n_folds"])
        for r in reports:
            ref = r.get("reference") or {}
            writer.writerow([
                r["experiment_id"], r["pipeline"]["preprocess"],
                ref.get("fraction_pct", ""),
                f"{r['mean_pog']:.4f}", f"{r['mean_pog_best']:.4f}",
                f"{r['mean_pog_final']:.4f}",
                ref.get("full_scale_pog_deg", ""), len(r["folds"]),
            ])


def reports_to_markdown(reports):
    lines = [
        "| experiment | preprocess | fraction | mean POG (deg) | best-epoch mean | final-epoch mean | full-scale ref |",
        "|---|---|---|---|---|---|---|",
    ]
    for r in reports:
        ref = r.get("reference") or {}
        ref_pog = ref.get("full_scale_pog_deg")
        lines.append(
            f"| {r['experiment_id']} | {r['pipeline']['preprocess']} "
            f"| {ref.get('fraction_pct', '-')} "
            f"| {r['mean_pog']:.3f} | {r['mean_pog_best']:.3f} | {r['mean_pog_final']:.3f} "
            f"| {ref_pog if ref_pog is not None else '-'} |")
    return "\n".join(lines) + "\n"


def plot_learning_curves(report, out_png):
    fig, ax = plt.subplots(figsize=(6, 4))
    for fold in report["folds"]:
        epochs = range(1, len(fold["test_pog_curve"]) + 1)
        ax.plot(epochs, fold["test_pog_curve"], label=f"subject {fold['subject']}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("test POG (deg)")
    ax.set_title(report["experiment_id"])
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def plot_shift_histogram(probe_dict, out_png):
    hist = probe_dict["shift_histogram"]
    edges, counts = hist["bin_edges_deg"], hist["counts"]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(edges[:-1], counts, width=[e2 - e1 for e1, e2 in zip(edges, edges[1:])],
           align="edge", edgecolor="black")
    ax.set_xlabel("prediction shift (deg)")
    ax.set_ylabel("samples")
    ax.set_title(f"mean shift {probe_dict['mean_shift_deg']:.2f} deg, "
                 f"centering {probe_dict['centering_score']:.2f}")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def render_report_dir(reports_dir, out_dir):
    """Render every report JSON in a directory to markdown, CSV, and plots."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = load_reports(reports_dir)
    if not reports:
        raise ValueError(f"no report JSON files under {reports_dir}")
    (out_dir / "summary.md").write_text(reports_to_markdown(reports))
    reports_to_csv(reports, out_dir / "summary.csv")
    for r in reports:
        if r.get("folds"):
            plot_learning_curves(r, out_dir / f"{r['experiment_id']}.png")
    return out_dir / "summary.md"
