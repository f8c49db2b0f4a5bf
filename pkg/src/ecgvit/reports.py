"""RunReport serialization: JSON and an aligned results table."""

from __future__ import annotations

import json
from pathlib import Path

from . import plotting

COLUMNS = ("Testing Sub", "Accuracy", "Precision", "Recall", "F1")


def format_table(report) -> str:
    rows = [
        [f.held_out_subject] + [f"{100 * getattr(f.metrics, k):.2f}" for k in ("accuracy", "precision", "recall", "f1")]
        for f in report.folds
    ]
    avg = report.average
    rows.append(["Average"] + [f"{100 * avg[k]:.2f}" for k in ("accuracy", "precision", "recall", "f1")])
    widths = [max(len(COLUMNS[i]), *(len(r[i]) for r in rows)) for i in range(len(COLUMNS))]

    def line(cells):
        return " | ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(cells))

    sep = "-+-".join("-" * w for w in widths)
    out = [line(COLUMNS), sep] + [line(r) for r in rows[:-1]] + [sep, line(rows[-1])]
    return "\n".join(out) + "\n"


def write_report(report, out_dir: str | Path, class_names=None, figures: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "report.json", "txt": out / "report.txt"}
    paths["json"].write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    paths["txt"].write_text(format_table(report))
    if figures:
        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        paths["fold_metrics"] = fig_dir / "fold_metrics.png"
        paths["curves"] = fig_dir / "training_curves.png"
        plotting.fold_metrics(report, paths["fold_metrics"])
        plotting.training_curves(report, paths["curves"])
        if class_names:
            paths["confusion"] = fig_dir / "confusion.png"
            plotting.confusion(report, class_names, paths["confusion"])
    return paths
