"""Semantic clustering (k-means, simplified HDBSCAN) and temporal subdivision.

Every clusterer returns a :class:`ClusterAssignment`: one integer label per
post, ``-1`` for noise, other labels contiguous from 0. Ties are broken by
lowest row index so runs are reproducible.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .datamodel import Dataset
from .embed import EmbeddingMatrix

NOISE = -1
LAMBDA_CAP_DISTANCE = 1e-12


class KTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ClusterAssignment:
    post_ids: tuple[str, ...]
    labels: np.ndarray
    stage: str = "semantic"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (len(self.post_ids),):
            raise ValueError("one label per post required")
        if self.stage not in ("semantic", "temporal"):
            raise ValueError(f"unknown stage {self.stage!r}")
        object.__setattr__(self, "post_ids", tuple(self.post_ids))
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.post_ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ClusterAssignment):
            return NotImplemented
        return (self.post_ids == other.post_ids and self.stage == other.stage
                and np.array_equal(self.labels, other.labels))

    def as_dict(self) -> dict[str, int]:
        return dict(zip(self.post_ids, self.labels.tolist()))

    @property
    def n_clusters(self) -> int:
        return len(np.unique(self.labels[self.labels >= 0]))

    @property
    def n_noise(self) -> int:
        return int(np.sum(self.labels == NOISE))

    def members(self) -> dict[int, np.ndarray]:
        """Row indices per non-noise label, labels ascending."""
        order = np.argsort(self.labels, kind="stable")
        sorted_labels = self.labels[order]
        out = {}
        for lab in np.unique(sorted_labels):
            if lab < 0:
                continue
            lo, hi = np.searchsorted(sorted_labels, [lab, lab + 1])
            out[int(lab)] = order[lo:hi]
        return out

    def sizes(self) -> dict[int, int]:
        labs, counts = np.unique(self.labels[self.labels >= 0], return_counts=True)
        return dict(zip(labs.tolist(), counts.tolist()))

    def singleton_mask(self) -> np.ndarray:
        sizes = self.sizes()
        return np.array([lab >= 0 and sizes[lab] == 1 for lab in self.labels.tolist()], dtype=bool)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["post_id", "label", "stage"])
            for pid, lab in zip(self.post_ids, self.labels.tolist()):
                writer.writerow([pid, lab, self.stage])

    @classmethod
    def load(cls, path) -> "ClusterAssignment":
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        stages = {r["stage"] for r in rows}
        if len(stages) > 1:
            raise ValueError(f"mixed stages in {path}: {sorted(stages)}")
        stage = stages.pop() if stages else "semantic"
        return cls(tuple(r["post_id"] for r in rows), np.array([int(r["label"]) for r in rows], dtype=np.int64), stage)


def compact_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber non-noise labels 0..k-1 in order of first appearance."""
    out = np.full(len(labels), NOISE, dtype=np.int64)
    mapping: dict[int, int] = {}
    for i, lab in enumerate(labels.tolist()):
        if lab < 0:
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


# -- k-means ---------------------------------------------------------------------


def default_k(n_rows: int) -> int:
    return max(1, math.ceil(math.sqrt(n_rows / 2)))


def _sq_dists(x: np.ndarray, centers: np.ndarray, chunk: int = 1024) -> np.ndarray:
    out = np.empty((len(x), len(centers)))
    for lo in range(0, len(x), chunk):
        diff = x[lo : lo + chunk, None, :] - centers[None, :, :]
        out[lo : lo + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def kmeans_plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; returns the chosen row indices."""
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # all remaining points coincide with a center: take the lowest unused index
            used = set(chosen)
            nxt = next(i for i in range(n) if i not in used)
        else:
            cum = np.cumsum(closest)
            nxt = int(np.searchsorted(cum, rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        chosen.append(nxt)
        closest = np.minimum(closest, np.sum((x - x[nxt]) ** 2, axis=1))
    return np.asarray(chosen, dtype=np.int64)


def lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int = 300):
    """Lloyd iterations from given centers until the assignment is a fixed point.

    Empty clusters are refilled with the point farthest from its centroid.
    Returns ``(labels, centers, inertia_history, n_iter)``; the history holds the
    inertia of every assignment visited.
    """
    centers = centers.astype(np.float64).copy()
    k = len(centers)
    labels = None
    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d = _sq_dists(x, centers)
        new = np.argmin(d, axis=1)
        history.append(float(np.sum(d[np.arange(len(x)), new])))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
        counts = np.bincount(labels, minlength=k)
        for c in np.flatnonzero(counts == 0):
            own = np.sum((x - centers[labels]) ** 2, axis=1)
            movable = counts[labels] > 1
            if not movable.any():
                break
            own[~movable] = -1.0
            far = int(np.argmax(own))
            counts[labels[far]] -= 1
            labels[far] = c
            counts[c] = 1
            centers[c] = x[far]
    return labels, centers, history, n_iter


def kmeans(m: EmbeddingMatrix, k: int, seed: int = 0, max_iter: int = 300) -> ClusterAssignment:
    x = m.values
    if k < 1:
        raise ValueError("k must be positive")
    if k > len(x):
        raise KTooLarge(f"k={k} exceeds {len(x)} rows")
    rng = np.random.default_rng(seed)
    seeds = kmeans_plus_plus(x, k, rng)
    labels, centers, history, n_iter = lloyd(x, x[seeds], max_iter)
    inertia = float(np.sum((x - centers[labels]) ** 2))
    meta = {"k": k, "inertia": inertia, "inertia_history": history, "n_iter": n_iter, "seeds": seeds.tolist()}
    return ClusterAssignment(m.row_ids, labels, "semantic", meta)


# -- simplified HDBSCAN ------------------------------------------------------------


def core_distances(x: np.ndarray, min_samples: int, chunk: int = 512) -> np.ndarray:
    """Distance to the ``min_samples``-th nearest point, counting the point itself."""
    n = len(x)
    k = min(min_samples, n) - 1
    out = np.zeros(n)
    sq = np.einsum("ij,ij->i", x, x)
    for lo in range(0, n, chunk):
        block = sq[lo : lo + chunk, None] + sq[None, :] - 2.0 * x[lo : lo + chunk] @ x.T
        np.maximum(block, 0.0, out=block)
        block[np.arange(len(block)), np.arange(lo, lo + len(block))] = 0.0
        out[lo : lo + chunk] = np.sqrt(np.partition(block, k, axis=1)[:, k])
    return out


def mutual_reachability_mst(x: np.ndarray, core: np.ndarray) -> np.ndarray:
    """Prim's algorithm on the implicit mutual-reachability graph.

    Returns an ``(n-1, 3)`` array of ``(a, b, weight)`` rows in insertion order.
    """
    n = len(x)
    if n < 2:
        return np.zeros((0, 3))
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    parent = np.zeros(n, dtype=np.int64)
    edges = np.zeros((n - 1, 3))
    sq = np.einsum("ij,ij->i", x, x)
    current = 0
    in_tree[0] = True
    for step in range(n - 1):
        d = np.sqrt(np.maximum(sq + sq[current] - 2.0 * (x @ x[current]), 0.0))
        mr = np.maximum(np.maximum(d, core), core[current])
        better = (mr < best) & ~in_tree
        best[better] = mr[better]
        parent[better] = current
        cand = np.where(in_tree, np.inf, best)
        nxt = int(np.argmin(cand))
        edges[step] = (parent[nxt], nxt, best[nxt])
        in_tree[nxt] = True
        current = nxt
    return edges


def single_linkage(mst: np.ndarray, n: int) -> np.ndarray:
    """Dendrogram rows ``(left, right, distance, size)``; merge i creates node n+i."""
    order = np.argsort(mst[:, 2], kind="stable")
    parent = np.arange(2 * n - 1)
    size = np.ones(2 * n - 1, dtype=np.int64)

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    tree = np.zeros((max(n - 1, 0), 4))
    for i, e in enumerate(order):
        a, b, w = int(mst[e, 0]), int(mst[e, 1]), mst[e, 2]
        ra, rb = find(a), find(b)
        node = n + i
        parent[ra] = parent[rb] = node
        size[node] = size[ra] + size[rb]
        tree[i] = (min(ra, rb), max(ra, rb), w, size[node])
    return tree


@dataclass
class CondensedTree:
    """Rows ``(parent, child, lambda, child_size)``.

    Cluster ids start at ``n_points`` (the root); smaller ids are points.
    """

    parent: np.ndarray
    child: np.ndarray
    lam: np.ndarray
    child_size: np.ndarray
    n_points: int

    def cluster_ids(self) -> np.ndarray:
        ids = np.unique(self.parent)
        return ids[ids >= self.n_points]

    def birth(self) -> dict[int, float]:
        out = {self.n_points: 0.0}
        for p, c, lam in zip(self.parent, self.child, self.lam):
            if c >= self.n_points:
                out[int(c)] = float(lam)
        return out

    def stability(self) -> dict[int, float]:
        births = self.birth()
        stab = {int(c): 0.0 for c in self.cluster_ids()}
        stab.setdefault(self.n_points, 0.0)
        for p, lam, size in zip(self.parent, self.lam, self.child_size):
            stab[int(p)] += (float(lam) - births[int(p)]) * float(size)
        return stab

    def children(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for p, c in zip(self.parent, self.child):
            if c >= self.n_points:
                out.setdefault(int(p), []).append(int(c))
        return out

    def leaves_under(self, clusters) -> dict[int, list[int]]:
        """Points belonging to each of ``clusters`` at its birth."""
        by_parent: dict[int, list[int]] = {}
        for p, c in zip(self.parent, self.child):
            by_parent.setdefault(int(p), []).append(int(c))
        out = {}
        for cluster in clusters:
            points, stack = [], [cluster]
            while stack:
                for c in by_parent.get(stack.pop(), []):
                    if c < self.n_points:
                        points.append(c)
                    else:
                        stack.append(c)
            out[cluster] = sorted(points)
        return out


def _lambda(distance: float) -> float:
    return 1.0 / max(distance, LAMBDA_CAP_DISTANCE)


def condense_tree(tree: np.ndarray, n: int, min_cluster_size: int) -> CondensedTree:
    rows: list[tuple[int, int, float, int]] = []
    if n < 2:
        empty = np.zeros(0, dtype=np.int64)
        return CondensedTree(empty, empty, np.zeros(0), empty, n_points=n)

    def size_of(node: int) -> int:
        return 1 if node < n else int(tree[node - n, 3])

    def points_of(node: int) -> list[int]:
        out, stack = [], [node]
        while stack:
            v = stack.pop()
            if v < n:
                out.append(v)
            else:
                stack.extend((int(tree[v - n, 0]), int(tree[v - n, 1])))
        return out

    root = 2 * n - 2
    next_label = n + 1
    # (dendrogram node, condensed cluster label)
    stack = [(root, n)]
    while stack:
        node, label = stack.pop()
        if node < n:
            continue
        left, right, dist, _ = tree[node - n]
        left, right = int(left), int(right)
        lam = _lambda(dist)
        big_left = size_of(left) >= min_cluster_size
        big_right = size_of(right) >= min_cluster_size
        if big_left and big_right:
            for ch in (left, right):
                rows.append((label, next_label, lam, size_of(ch)))
                stack.append((ch, next_label))
                next_label += 1
        elif big_left or big_right:
            keep, drop = (left, right) if big_left else (right, left)
            for p in points_of(drop):
                rows.append((label, p, lam, 1))
            stack.append((keep, label))
        else:
            for ch in (left, right):
                for p in points_of(ch):
                    rows.append((label, p, lam, 1))
    parent, child, lam, size = zip(*rows)
    return CondensedTree(np.array(parent), np.array(child), np.array(lam, dtype=float), np.array(size), n_points=n)


def select_eom(ct: CondensedTree) -> list[int]:
    """Excess-of-mass selection; the root is never selected."""
    stab = ct.stability()
    kids = ct.children()
    selected = {c: True for c in stab}
    root = ct.n_points
    for c in sorted(stab, reverse=True):
        if c == root:
            continue
        sub = sum(stab[k] for k in kids.get(c, []))
        if kids.get(c) and sub > stab[c]:
            selected[c] = False
            stab[c] = sub
        else:
            stack = list(kids.get(c, []))
            while stack:
                d = stack.pop()
                selected[d] = False
                stack.extend(kids.get(d, []))
    return sorted(c for c, on in selected.items() if on and c != root)


def hdbscan_simplified(m: EmbeddingMatrix, min_cluster_size: int = 2, min_samples: int = 1) -> ClusterAssignment:
    """HDBSCAN without the refinements of the full algorithm.

    Mutual reachability (core distance to the ``min_samples``-th neighbor,
    self included), Prim MST, single-linkage hierarchy, condensed tree with
    ``min_cluster_size``, excess-of-mass selection. Points outside every
    selected cluster are noise.
    """
    if min_cluster_size < 2:
        raise ValueError("min_cluster_size must be >= 2")
    if min_samples < 1:
        raise ValueError("min_samples must be >= 1")
    x = m.values
    n = len(x)
    labels = np.full(n, NOISE, dtype=np.int64)
    meta = {"min_cluster_size": min_cluster_size, "min_samples": min_samples}
    if n < min_cluster_size or n < 2:
        return ClusterAssignment(m.row_ids, labels, "semantic", meta)
    core = core_distances(x, min_samples)
    mst = mutual_reachability_mst(x, core)
    tree = single_linkage(mst, n)
    ct = condense_tree(tree, n, min_cluster_size)
    chosen = select_eom(ct)
    for i, points in enumerate(ct.leaves_under(chosen).values()):
        labels[points] = i
    meta["selected"] = len(chosen)
    return ClusterAssignment(m.row_ids, compact_labels(labels), "semantic", meta)


# -- temporal subdivision ------------------------------------------------------------


@dataclass(frozen=True)
class TemporalParams:
    epsilon_seconds: float = 52.0
    min_pts: int = 2

    def __post_init__(self):
        if not self.epsilon_seconds > 0:
            raise ValueError("epsilon_seconds must be positive")
        if self.min_pts < 2:
            raise ValueError("min_pts must be >= 2")


def dbscan_1d(times: np.ndarray, epsilon: float, min_pts: int) -> np.ndarray:
    """DBSCAN on a line under absolute difference.

    Neighborhoods include the point itself. Border points join the cluster of
    their nearest core point (earlier core on ties). Returns labels with -1 for
    noise, clusters numbered by earliest member time.
    """
    times = np.asarray(times, dtype=np.float64)
    n = len(times)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    order = np.argsort(times, kind="stable")
    t = times[order]
    counts = np.searchsorted(t, t + epsilon, side="right") - np.searchsorted(t, t - epsilon, side="left")
    core = counts >= min_pts
    core_pos = np.flatnonzero(core)
    if len(core_pos) == 0:
        return labels
    core_t = t[core_pos]
    comp = np.concatenate([[0], np.cumsum(np.diff(core_t) > epsilon)])
    sorted_labels = np.full(n, NOISE, dtype=np.int64)
    sorted_labels[core_pos] = comp
    for i in np.flatnonzero(~core):
        j = np.searchsorted(core_t, t[i])
        best, best_d = NOISE, math.inf
        for cand in (j - 1, j):
            if 0 <= cand < len(core_t):
                d = abs(core_t[cand] - t[i])
                if d <= epsilon and d < best_d:
                    best, best_d = comp[cand], d
        sorted_labels[i] = best
    labels[order] = sorted_labels
    return labels


def temporal_subdivide(base: ClusterAssignment, ds: Dataset, params: TemporalParams = TemporalParams()) -> ClusterAssignment:
    """Split each semantic cluster by 1-D DBSCAN over publication time.

    Sub-clusters get fresh global labels. DBSCAN noise becomes singleton
    clusters so that :func:`drop_singletons` can discard them later; posts that
    were noise in ``base`` stay noise.
    """
    if base.stage != "semantic":
        raise ValueError("temporal_subdivide expects a semantic-stage assignment")
    times = np.array([ds.post(pid).published_time for pid in base.post_ids], dtype=np.float64)
    labels = np.full(len(base), NOISE, dtype=np.int64)
    parent = {}
    next_label = 0
    for base_label, rows in base.members().items():
        sub = dbscan_1d(times[rows], params.epsilon_seconds, params.min_pts)
        for s in range(sub.max() + 1 if len(sub) else 0):
            labels[rows[sub == s]] = next_label
            parent[next_label] = base_label
            next_label += 1
        for r in rows[sub == NOISE]:
            labels[r] = next_label
            parent[next_label] = base_label
            next_label += 1
    meta = {"epsilon_seconds": params.epsilon_seconds, "min_pts": params.min_pts, "parent": parent}
    return ClusterAssignment(base.post_ids, labels, "temporal", meta)


def drop_singletons(a: ClusterAssignment) -> ClusterAssignment:
    """Relabel size-1 clusters as noise and compact the remaining labels."""
    labels = a.labels.copy()
    labels[a.singleton_mask()] = NOISE
    compact = compact_labels(labels)
    meta = dict(a.meta)
    if "parent" in a.meta:
        meta["parent"] = {int(n): a.meta["parent"][int(o)] for o, n in zip(labels, compact) if n >= 0}
    meta["dropped_singletons"] = int(a.singleton_mask().sum())
    return ClusterAssignment(a.post_ids, compact, a.stage, meta)


def refines(fine: ClusterAssignment, coarse: ClusterAssignment) -> bool:
    """True when every non-noise cluster of ``fine`` lies inside one cluster of ``coarse``."""
    if fine.post_ids != coarse.post_ids:
        raise ValueError("assignments cover different posts")
    for rows in fine.members().values():
        parents = np.unique(coarse.labels[rows])
        if len(parents) != 1 or parents[0] == NOISE:
            return False
    return True
