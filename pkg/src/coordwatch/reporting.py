"""Report files for finished runs: CSV tables, JSON summaries and PNG figures."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence

from .evaluate import EvaluationReport, write_fig3, write_reports_json, write_table2, write_table3

# Agg must be selected before pyplot is imported anywhere in the process.
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_PNG_META = {"Software": None}


def _bar(ax, hist: dict[int, int], width: float):
    xs = sorted(hist)
    ax.bar(xs, [hist[x] for x in xs], width=width, align="edge", color="#4c72b0", edgecolor="black", linewidth=0.4)


def plot_fig3(report: EvaluationReport, sizes_png, gaps_png) -> None:
    """Cluster-size and max-time-gap histograms (log counts)."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    _bar(ax, report.size_hist, 0.8)
    ax.set_yscale("log")
    ax.set_xlabel("posts per cluster")
    ax.set_ylabel("clusters")
    ax.set_title(report.method_name)
    fig.tight_layout()
    fig.savefig(sizes_png, dpi=120, metadata=_PNG_META)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3.2))
    _bar(ax, report.gap_hist, 9.0)
    ax.set_yscale("log")
    ax.set_xlabel("max time gap within cluster (s)")
    ax.set_ylabel("clusters")
    ax.set_title(report.method_name)
    fig.tight_layout()
    fig.savefig(gaps_png, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_sweep(rows: Sequence[dict], png) -> None:
    eps = [r["epsilon_seconds"] for r in rows]
    avg = [r["fact_avg"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(eps, avg, marker="o", color="#4c72b0")
    finite = [(a, e) for a, e in zip(avg, eps) if not math.isnan(a)]
    if finite:
        best = min(finite)
        ax.axvline(best[1], color="#c44e52", linestyle="--", linewidth=0.8)
    ax.set_xscale("log")
    ax.set_xlabel("temporal epsilon (s)")
    ax.set_ylabel("mean within-cluster factuality std")
    fig.tight_layout()
    fig.savefig(png, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def write_run_outputs(report: EvaluationReport, out: Path, figures: bool = True) -> list[Path]:
    """Everything the evaluation stage of a single run emits."""
    out = Path(out)
    paths = [out / "report.json", out / "table2.csv", out / "fig3_sizes.csv", out / "fig3_gaps.csv",
             out / "table3.csv"]
    write_reports_json([report], paths[0])
    write_table2([report], paths[1])
    write_fig3(report, paths[2], paths[3])
    write_table3(report, paths[4])
    if figures:
        pngs = [out / "fig3_sizes.png", out / "fig3_gaps.png"]
        plot_fig3(report, *pngs)
        paths += pngs
    return paths


SWEEP_COLUMNS = ("epsilon_seconds", "fact_avg", "fact_median", "fact_std", "fact_prop0", "clusters_kept",
                 "posts_kept", "silhouette")


def write_sweep(rows: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for r in rows:
            writer.writerow([_cell(r[c]) for c in SWEEP_COLUMNS])


def _cell(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return v
