"""Cluster quality metrics and report tables.

Factuality dispersion uses the population standard deviation, so a cluster
whose labeled posts all share one score has a dispersion of exactly 0.

Per-cluster dispersions can only range over [0, 2.5] for scores in 0..5;
medians above 2.5 are impossible and none are produced here.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .cluster import NOISE, ClusterAssignment
from .datamodel import Dataset, population_std
from .embed import EmbeddingMatrix

TABLE2_COLUMNS = ("Methods", "Silhouette", "Avg", "Median", "Std", "∝0")


class TooFewClusters(ValueError):
    pass


class NoQualifyingClusters(ValueError):
    pass


# -- silhouette ------------------------------------------------------------------


def silhouette_samples(x: np.ndarray, labels: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Per-point silhouette; points alone in their cluster score 0."""
    uniq, inv = np.unique(labels, return_inverse=True)
    k = len(uniq)
    sizes = np.bincount(inv, minlength=k).astype(np.float64)
    onehot = np.zeros((len(x), k))
    onehot[np.arange(len(x)), inv] = 1.0
    out = np.zeros(len(x))
    for lo in range(0, len(x), chunk):
        d = cdist(x[lo : lo + chunk], x)
        sums = d @ onehot
        own = inv[lo : lo + chunk]
        rows = np.arange(len(own))
        own_size = sizes[own]
        a = np.divide(sums[rows, own], own_size - 1, out=np.zeros(len(own)), where=own_size > 1)
        means = sums / sizes
        means[rows, own] = np.inf
        b = means.min(axis=1)
        denom = np.maximum(a, b)
        s = np.divide(b - a, denom, out=np.zeros(len(own)), where=denom > 0)
        s[own_size <= 1] = 0.0
        out[lo : lo + chunk] = s
    return out


def silhouette(m: EmbeddingMatrix, a: ClusterAssignment, max_points: int = 50_000,
               sample_size: int = 10_000, seed: int = 0) -> float:
    """Mean silhouette over non-noise posts, Euclidean distances on ``m``.

    Above ``max_points`` posts a seeded uniform sample of ``sample_size`` posts
    is scored instead.
    """
    if m.row_ids != a.post_ids:
        m = m.take(a.post_ids)
    keep = a.labels != NOISE
    x, labels = m.values[keep], a.labels[keep]
    if len(np.unique(labels)) < 2:
        raise TooFewClusters("silhouette needs at least two non-noise clusters")
    if len(x) > max_points:
        rows = np.sort(np.random.default_rng(seed).choice(len(x), size=sample_size, replace=False))
        x, labels = x[rows], labels[rows]
        if len(np.unique(labels)) < 2:
            raise TooFewClusters("sample holds fewer than two clusters")
    return float(np.mean(silhouette_samples(x, labels)))


# -- factuality --------------------------------------------------------------------


@dataclass(frozen=True)
class FactualityStats:
    avg: float
    median: float
    std: float
    prop0: float
    cluster_stds: dict[int, float]
    qualifying: int
    excluded_unlabeled: int


def factuality_stats(a: ClusterAssignment, ds: Dataset) -> FactualityStats:
    """Spread of factuality inside clusters of size >= 2 with >= 2 labeled posts."""
    stds: dict[int, float] = {}
    excluded = 0
    for label, rows in a.members().items():
        if len(rows) < 2:
            continue
        scores = [ds.factuality_of(ds.post(a.post_ids[r])) for r in rows]
        scores = [s for s in scores if s is not None]
        if len(scores) < 2:
            excluded += 1
            continue
        stds[label] = population_std(scores)
    if not stds:
        raise NoQualifyingClusters("no cluster has two or more labeled posts")
    values = list(stds.values())
    return FactualityStats(
        avg=math.fsum(values) / len(values),
        median=float(statistics.median(values)),
        std=population_std(values),
        prop0=sum(v == 0.0 for v in values) / len(values),
        cluster_stds=stds,
        qualifying=len(values),
        excluded_unlabeled=excluded,
    )


# -- distributions -------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterDistributions:
    sizes: dict[int, int]
    gaps: dict[int, int]
    platform_counts: dict[str, int]
    n_clusters: int
    n_posts: int
    max_size: int
    max_gap: int

    @property
    def mean_size(self) -> float:
        return self.n_posts / self.n_clusters if self.n_clusters else 0.0


def cluster_distributions(a: ClusterAssignment, ds: Dataset, gap_bucket: int = 10) -> ClusterDistributions:
    """Histogram of cluster sizes and of per-cluster max time gap.

    Gap buckets are keyed by their lower edge in seconds.
    """
    sizes: Counter = Counter()
    gaps: Counter = Counter()
    platforms: Counter = Counter()
    max_gap = 0
    n_posts = 0
    members = a.members()
    for rows in members.values():
        posts = [ds.post(a.post_ids[r]) for r in rows]
        times = [p.published_time for p in posts]
        gap = max(times) - min(times)
        max_gap = max(max_gap, gap)
        sizes[len(rows)] += 1
        gaps[(gap // gap_bucket) * gap_bucket] += 1
        platforms.update(p.platform for p in posts)
        n_posts += len(rows)
    return ClusterDistributions(
        sizes=dict(sorted(sizes.items())),
        gaps=dict(sorted(gaps.items())),
        platform_counts=dict(sorted(platforms.items())),
        n_clusters=len(members),
        n_posts=n_posts,
        max_size=max(sizes) if sizes else 0,
        max_gap=max_gap,
    )


@dataclass(frozen=True)
class ChannelRow:
    channel_id: str
    name: str
    posts: int
    factuality: Optional[int]


@dataclass(frozen=True)
class ChannelTable:
    rows: list[ChannelRow]
    zero_fraction: float
    zero_fraction_labeled: float


def channel_frequency(a: ClusterAssignment, ds: Dataset, top_n: int = 10) -> ChannelTable:
    """Channels ranked by clustered posts linking them (ties by channel id).

    ``zero_fraction`` is the share of clustered posts with a channel whose
    factuality is 0; ``zero_fraction_labeled`` restricts the denominator to
    posts whose channel is labeled.
    """
    counts: Counter = Counter()
    for pid, label in zip(a.post_ids, a.labels.tolist()):
        if label == NOISE:
            continue
        channel = ds.channel_of(ds.post(pid))
        if channel is not None:
            counts[channel] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    rows = [ChannelRow(cid, ds.channels[cid].name, n, ds.channels[cid].factuality) for cid, n in ranked[:top_n]]
    total = sum(counts.values())
    labeled = sum(n for cid, n in counts.items() if ds.channels[cid].factuality is not None)
    zero = sum(n for cid, n in counts.items() if ds.channels[cid].factuality == 0)
    return ChannelTable(rows, zero / total if total else 0.0, zero / labeled if labeled else 0.0)


# -- report --------------------------------------------------------------------------


@dataclass
class EvaluationReport:
    method_name: str
    silhouette: float
    fact_avg: float
    fact_median: float
    fact_std: float
    fact_prop0: float
    clusters_total: int
    clusters_kept: int
    posts_kept: int
    platform_counts: dict[str, int]
    size_hist: dict[int, int]
    gap_hist: dict[int, int]
    channel_table: list[dict]
    qualifying_clusters: int = 0
    zero_fraction: float = 0.0
    extra: dict = field(default_factory=dict)
    error: Optional[str] = None

    def table2_row(self) -> list[str]:
        return [self.method_name] + [_fmt(v) for v in (self.silhouette, self.fact_avg, self.fact_median,
                                                        self.fact_std, self.fact_prop0)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["size_hist"] = {str(k): v for k, v in self.size_hist.items()}
        d["gap_hist"] = {str(k): v for k, v in self.gap_hist.items()}
        return d


def _fmt(v: float) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return f"{v:.4f}"


def evaluate(method_name: str, features: EmbeddingMatrix, semantic: ClusterAssignment,
             final: ClusterAssignment, ds: Dataset, top_channels: int = 10, **silhouette_kw) -> EvaluationReport:
    """Score one finished pipeline run.

    ``semantic`` counts toward ``clusters_total`` only when ``final`` is the
    semantic assignment itself; temporal runs count their own pre-drop total in
    ``final.meta``.
    """
    try:
        sil = silhouette(features, final, **silhouette_kw)
    except TooFewClusters:
        sil = float("nan")
    try:
        fs = factuality_stats(final, ds)
        fact = (fs.avg, fs.median, fs.std, fs.prop0, fs.qualifying)
    except NoQualifyingClusters:
        fact = (float("nan"),) * 4 + (0,)
    dist = cluster_distributions(final, ds)
    chans = channel_frequency(final, ds, top_channels)
    clusters_total = final.meta.get("clusters_before_drop", final.n_clusters)
    return EvaluationReport(
        method_name=method_name,
        silhouette=sil,
        fact_avg=fact[0],
        fact_median=fact[1],
        fact_std=fact[2],
        fact_prop0=fact[3],
        clusters_total=clusters_total,
        clusters_kept=dist.n_clusters,
        posts_kept=dist.n_posts,
        platform_counts=dist.platform_counts,
        size_hist=dist.sizes,
        gap_hist=dist.gaps,
        channel_table=[asdict(r) for r in chans.rows],
        qualifying_clusters=fact[4],
        zero_fraction=chans.zero_fraction,
        extra={"semantic_clusters": semantic.n_clusters, "max_size": dist.max_size, "max_gap": dist.max_gap},
    )


def write_table2(reports: list[EvaluationReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TABLE2_COLUMNS)
        for r in reports:
            writer.writerow(r.table2_row())


def write_fig3(report: EvaluationReport, sizes_path, gaps_path) -> None:
    with open(sizes_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cluster_size", "clusters"])
        writer.writerows(sorted(report.size_hist.items()))
    with open(gaps_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["max_gap_seconds", "clusters"])
        writer.writerows(sorted(report.gap_hist.items()))


def write_table3(report: EvaluationReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["channel_id", "name", "posts", "factuality"])
        for row in report.channel_table:
            writer.writerow([row["channel_id"], row["name"], row["posts"],
                             "" if row["factuality"] is None else row["factuality"]])


def write_reports_json(reports: list[EvaluationReport], path, **extra) -> None:
    payload = {**extra, "reports": [r.to_dict() for r in reports]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")
