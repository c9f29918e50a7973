"""Figure rendering for evaluation reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import PARTITIONS, EvaluationReport


def render_report_figures(report: EvaluationReport, out_dir: str | Path) -> list[Path]:
    """Write accuracy-by-partition bars and a per-binary scatter as PNGs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [
        _partition_bars(report, out / "accuracy_by_partition.png"),
        _per_binary_scatter(report, out / "per_binary_accuracy.png"),
    ]
    return written


def _partition_bars(report: EvaluationReport, path: Path) -> Path:
    labels = []
    type_acc = []
    name_acc = []
    for name in PARTITIONS:
        scores = report.partitions.get(name)
        if scores is None:
            continue
        labels.append(name.replace("function_", "").replace("_", " "))
        type_acc.append(100 * (scores.type_macro or 0.0))
        name_acc.append(100 * (scores.name_macro or 0.0))
    fig, ax = plt.subplots(figsize=(7, 4))
    x = range(len(labels))
    width = 0.38
    ax.bar([i - width / 2 for i in x], type_acc, width, label="type match")
    ax.bar([i + width / 2 for i in x], name_acc, width, label="name match")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=15, ha="right")
    ax.set_ylabel("accuracy (%, macro over functions)")
    ax.set_ylim(0, 100)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _per_binary_scatter(report: EvaluationReport, path: Path) -> Path:
    xs = [row.n_variables for row in report.per_binary if row.type_accuracy is not None]
    ys = [100 * row.type_accuracy for row in report.per_binary if row.type_accuracy is not None]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(xs, ys, s=18, alpha=0.7)
    ax.set_xlabel("variables in binary")
    ax.set_ylabel("type accuracy (%)")
    ax.set_ylim(-2, 102)
    if xs:
        ax.set_xscale("symlog" if max(xs) > 200 else "linear")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
