"""Ablation grid and epsilon sweep over a shared :class:`Workspace`."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .cluster import refines
from .datamodel import InsufficientLabels, dataset_factuality_std
from .evaluate import EvaluationReport, write_reports_json, write_table2
from .pipeline import MethodConfig, Workspace, table2_grid
from .reporting import plot_sweep, write_sweep

logger = logging.getLogger(__name__)


@dataclass
class AblationResult:
    reports: list[EvaluationReport]
    baseline_std: Optional[float]
    refinement_ok: dict[str, bool] = field(default_factory=dict)

    def by_name(self) -> dict[str, EvaluationReport]:
        return {r.method_name: r for r in self.reports}

    def failed(self) -> list[str]:
        return [r.method_name for r in self.reports if r.error]


def _nan_report(method: MethodConfig, exc: BaseException) -> EvaluationReport:
    nan = float("nan")
    return EvaluationReport(method.name, nan, nan, nan, nan, nan, 0, 0, 0, {}, {}, {}, [],
                            error=f"{type(exc).__name__}: {exc}")


def run_ablation(ws: Workspace, rows: Optional[Iterable[MethodConfig]] = None) -> AblationResult:
    """Evaluate each row; a failing row yields NaN metrics and the rest continue."""
    rows = list(rows) if rows is not None else table2_grid()
    reports, refined = [], {}
    for method in rows:
        try:
            report = ws.report(method)
            if method.temporal:
                refined[method.name] = refines(ws.temporal(method), ws.semantic(method.text, method.network))
        except Exception as exc:  # noqa: BLE001 - one broken row must not sink the table
            logger.warning("ablation row %s failed: %s", method.name, exc)
            report = _nan_report(method, exc)
        reports.append(report)
    try:
        baseline = dataset_factuality_std(ws.dataset)
    except InsufficientLabels:
        baseline = None
    return AblationResult(reports, baseline, refined)


def write_ablation(result: AblationResult, out) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "table2.csv", out / "ablation.json"]
    write_table2(result.reports, paths[0])
    write_reports_json(result.reports, paths[1], dataset_std=result.baseline_std,
                       refinement_ok=result.refinement_ok, failed_rows=result.failed())
    return paths


def parse_epsilons(text: str) -> list[float]:
    """``"10..120"`` (step 10), ``"10..600:30"`` or a comma list ``"10,20,52"``."""
    text = text.strip()
    if ".." in text:
        span, _, step = text.partition(":")
        lo, hi = (float(v) for v in span.split(".."))
        step_v = float(step) if step else 10.0
        if step_v <= 0 or hi < lo:
            raise ValueError(f"bad epsilon range {text!r}")
        n = int(math.floor((hi - lo) / step_v + 1e-9)) + 1
        return [lo + i * step_v for i in range(n)]
    values = [float(v) for v in text.split(",") if v.strip()]
    if not values:
        raise ValueError("no epsilon values given")
    return values


def epsilon_sweep(ws: Workspace, method: MethodConfig, epsilons: Sequence[float]) -> list[dict]:
    """Temporal epsilon against factuality dispersion; semantic clusters are reused."""
    if not method.temporal:
        method = MethodConfig(method.text, method.network, True)
    rows = []
    for eps in epsilons:
        r = ws.report(method, float(eps))
        rows.append({
            "epsilon_seconds": float(eps),
            "fact_avg": r.fact_avg,
            "fact_median": r.fact_median,
            "fact_std": r.fact_std,
            "fact_prop0": r.fact_prop0,
            "clusters_kept": r.clusters_kept,
            "posts_kept": r.posts_kept,
            "silhouette": r.silhouette,
        })
    return rows


def sweep_argmin(rows: Sequence[dict]) -> Optional[float]:
    """Epsilon with the lowest fact_avg; the smallest epsilon wins ties."""
    finite = [(r["fact_avg"], r["epsilon_seconds"]) for r in rows if not math.isnan(r["fact_avg"])]
    return min(finite)[1] if finite else None


def write_epsilon_sweep(rows: Sequence[dict], out, figures: bool = True) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "epsilon_sweep.csv"]
    write_sweep(rows, paths[0])
    if figures:
        paths.append(out / "epsilon_sweep.png")
        plot_sweep(rows, paths[1])
    return paths

