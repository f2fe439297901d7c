"""Report emission: CSV for machines, markdown for humans, PNG figures.

CSV content is a pure function of the summary rows (timings never appear in
it), so identical runs emit byte-identical files.  Figures are rendered with
the Agg backend next to the tables.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .run import SummaryRow

METRIC_COLUMNS = ("IS", "PFS", "ICS", "T-ICS", "T-ICS_Emb")

OMISSION_FOOTER = (
    "Note: the visual cross-attention adapter baseline is not implemented in "
    "this testbed; rows cover vanilla, static_all, charcom, and charcom "
    "ablations only."
)


def _label_columns(rows: Sequence[SummaryRow]) -> List[str]:
    cols = ["method"]
    if any(r.cast_size is not None for r in rows):
        cols.append("cast_size")
    if any(r.ref_count is not None for r in rows):
        cols.append("ref_count")
    return cols


def _label_values(row: SummaryRow, cols: Sequence[str]) -> List[str]:
    out = []
    for c in cols:
        if c == "method":
            out.append(row.method)
        elif c == "cast_size":
            out.append("" if row.cast_size is None else str(row.cast_size))
        elif c == "ref_count":
            out.append("" if row.ref_count is None else str(row.ref_count))
    return out


def write_csv(rows: Sequence[SummaryRow], path) -> None:
    label_cols = _label_columns(rows)
    header = list(label_cols)
    for m in METRIC_COLUMNS:
        header += [m, f"{m}_std"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            cells = _label_values(row, label_cols)
            for m in METRIC_COLUMNS:
                mean, std = row.metrics.get(m, (float("nan"), float("nan")))
                cells += [f"{mean:.6f}", f"{std:.6f}"]
            writer.writerow(cells)


def write_markdown(
    rows: Sequence[SummaryRow], path, footer_lines: Sequence[str] = ()
) -> None:
    label_cols = _label_columns(rows)
    header = [c.replace("_", " ") for c in label_cols] + list(METRIC_COLUMNS)
    lines = [
        "| " + " | ".join(header) + " |",
        "| " + " | ".join("---" for _ in header) + " |",
    ]
    for row in rows:
        cells = _label_values(row, label_cols)
        for m in METRIC_COLUMNS:
            mean, std = row.metrics.get(m, (float("nan"), float("nan")))
            cells.append(f"{mean:.4f} ± {std:.4f}")
        lines.append("| " + " | ".join(cells) + " |")
    for note in (*footer_lines, OMISSION_FOOTER):
        lines.append("")
        lines.append(note)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def emit_report(
    rows: Sequence[SummaryRow],
    out_dir,
    name: str,
    footer_lines: Sequence[str] = (),
    figures: bool = True,
) -> Dict[str, Path]:
    """Write <name>.csv, <name>.md, and a companion figure; return the paths."""
    if not rows:
        raise ValueError("nothing to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{name}.csv", "markdown": out / f"{name}.md"}
    write_csv(rows, paths["csv"])
    write_markdown(rows, paths["markdown"], footer_lines)
    if figures:
        fig_path = out / f"{name}.png"
        if any(r.cast_size is not None for r in rows):
            _plot_by_x(rows, fig_path, x_attr="cast_size",
                       x_label="characters per scene")
        elif any(r.ref_count is not None for r in rows):
            _plot_by_x(rows, fig_path, x_attr="ref_count",
                       x_label="references per character")
        else:
            _plot_method_bars(rows, fig_path)
        paths["figure"] = fig_path
    return paths


def _plot_method_bars(rows: Sequence[SummaryRow], path) -> None:
    fig, axes = plt.subplots(1, len(METRIC_COLUMNS), figsize=(3 * len(METRIC_COLUMNS), 3.2))
    labels = [r.method for r in rows]
    xs = range(len(rows))
    for ax, metric in zip(axes, METRIC_COLUMNS):
        means = [r.metrics[metric][0] for r in rows]
        stds = [r.metrics[metric][1] for r in rows]
        ax.bar(xs, means, yerr=stds, capsize=3, color="#4878a8")
        ax.set_title(metric)
        ax.set_xticks(list(xs))
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_by_x(rows: Sequence[SummaryRow], path, x_attr: str, x_label: str) -> None:
    methods = sorted({r.method for r in rows})
    fig, axes = plt.subplots(1, len(METRIC_COLUMNS), figsize=(3 * len(METRIC_COLUMNS), 3.2))
    for ax, metric in zip(axes, METRIC_COLUMNS):
        for method in methods:
            pts = sorted(
                (getattr(r, x_attr), r.metrics[metric][0])
                for r in rows if r.method == method
            )
            ax.plot([p[0] for p in pts], [p[1] for p in pts],
                    marker="o", label=method)
        ax.set_title(metric)
        ax.set_xlabel(x_label)
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss_trace(trace: Sequence[float], path, title: str = "training loss") -> None:
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(range(len(trace)), trace, linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_loss_trace(trace: Sequence[float], path) -> None:
    """Plain-text (step, loss) pairs, one per line."""
    lines = [f"{i} {v:.10f}" for i, v in enumerate(trace)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_timings(records_by_method: Dict[str, list], path) -> None:
    """Merge/sample wall-clock summary as JSON; kept out of the metric CSVs."""
    import json

    summary = {}
    for method, records in sorted(records_by_method.items()):
        merges = [t for r in records for t in r.merge_seconds]
        samples = [t for r in records for t in r.sample_seconds]
        summary[method] = {
            "merge_seconds_mean": sum(merges) / len(merges) if merges else None,
            "merge_seconds_max": max(merges) if merges else None,
            "sample_seconds_mean": sum(samples) / len(samples) if samples else None,
            "scenes": len(merges),
        }
    Path(path).write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
