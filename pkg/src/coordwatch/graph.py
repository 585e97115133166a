"""User -> post -> video -> channel interaction network and random-walk corpora.

Nodes are named ``"<type>:<id>"`` so ids from different record kinds never
collide. Adjacency is stored as CSR with each neighbor list sorted by
(node type, node index), which lets the meta-path walker slice the neighbors
of a given type in O(1).

Both walkers reseed a per-walk stream from ``(seed, start node, walk index)``,
so the corpus does not depend on how many threads generate it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np
from numba import njit, prange

from .datamodel import Dataset

NODE_TYPES = ("user", "post", "video", "channel")
TYPE_CODE = {t: i for i, t in enumerate(NODE_TYPES)}
EDGE_KINDS = frozenset({("user", "post"), ("post", "video"), ("video", "channel")})

DEFAULT_METAPATHS = (
    ("user", "post", "video", "post", "user"),
    ("video", "channel", "video"),
    ("post", "user", "post"),
    ("channel", "video", "channel"),
)


class NoAdmissibleStart(ValueError):
    pass


class InvalidMetaPath(ValueError):
    pass


def node_name(node_type: str, ident: str) -> str:
    return f"{node_type}:{ident}"


def split_node_name(name: str) -> tuple[str, str]:
    node_type, _, ident = name.partition(":")
    return node_type, ident


@dataclass
class HeteroGraph:
    names: list[str]
    types: np.ndarray  # int8 type code per node
    indptr: np.ndarray
    indices: np.ndarray
    typed_ptr: np.ndarray = field(repr=False)  # (n_nodes, n_types + 1) offsets into indices

    def __post_init__(self):
        self._lookup = {name: i for i, name in enumerate(self.names)}

    @property
    def n_nodes(self) -> int:
        return len(self.names)

    @property
    def n_edges(self) -> int:
        return int(self.indptr[-1]) // 2

    def index(self, name: str) -> int:
        return self._lookup[name]

    def __contains__(self, name: str) -> bool:
        return name in self._lookup

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node] : self.indptr[node + 1]]

    def has_edge(self, a: int, b: int) -> bool:
        nbrs = self.neighbors(a)
        return bool(np.any(nbrs == b))

    def type_of(self, node: int) -> str:
        return NODE_TYPES[self.types[node]]

    def nodes_of_type(self, node_type: str) -> np.ndarray:
        return np.flatnonzero(self.types == TYPE_CODE[node_type])

    @property
    def type_index(self) -> dict[str, list[str]]:
        return {t: [self.names[i] for i in self.nodes_of_type(t)] for t in NODE_TYPES}

    def edges(self) -> set[tuple[str, str]]:
        out = set()
        for a in range(self.n_nodes):
            for b in self.neighbors(a):
                if a < b:
                    out.add((self.names[a], self.names[int(b)]))
        return out

    def count_by_type(self) -> dict[str, int]:
        counts = np.bincount(self.types.astype(np.int64), minlength=len(NODE_TYPES))
        return {t: int(counts[i]) for i, t in enumerate(NODE_TYPES)}


def _from_edges(names: list[str], types: np.ndarray, edges: list[tuple[int, int]]) -> HeteroGraph:
    n = len(names)
    if edges:
        e = np.asarray(edges, dtype=np.int64)
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
    else:
        src = dst = np.zeros(0, dtype=np.int64)
    order = np.lexsort((dst, types[dst] if len(dst) else dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)
    indices = dst.astype(np.int32)
    n_types = len(NODE_TYPES)
    typed_ptr = np.zeros((n, n_types + 1), dtype=np.int64)
    for v in range(n):
        lo, hi = indptr[v], indptr[v + 1]
        nbr_types = types[indices[lo:hi]]
        typed_ptr[v] = lo + np.searchsorted(nbr_types, np.arange(n_types + 1), side="left")
    return HeteroGraph(names, types.astype(np.int8), indptr, indices, typed_ptr)


def build_graph(ds: Dataset) -> HeteroGraph:
    """Multipartite network: users-posts, posts-videos, videos-channels.

    Node order is users (first appearance), posts, videos, channels; every
    video and channel of the dataset gets a node even when no post links it.
    """
    names: list[str] = []
    types: list[int] = []
    index: dict[str, int] = {}

    def add(node_type: str, ident: str) -> int:
        key = node_name(node_type, ident)
        if key not in index:
            index[key] = len(names)
            names.append(key)
            types.append(TYPE_CODE[node_type])
        return index[key]

    for post in ds.posts:
        add("user", post.user_id)
    for post in ds.posts:
        add("post", post.post_id)
    for video_id in ds.videos:
        add("video", video_id)
    for channel_id in ds.channels:
        add("channel", channel_id)

    edges = []
    for post in ds.posts:
        p = index[node_name("post", post.post_id)]
        edges.append((index[node_name("user", post.user_id)], p))
        if post.video_id is not None:
            edges.append((p, index[node_name("video", post.video_id)]))
    for video in ds.videos.values():
        edges.append((index[node_name("video", video.video_id)], index[node_name("channel", video.channel_id)]))
    return _from_edges(names, np.asarray(types, dtype=np.int64), edges)


# -- walk configuration and corpus ----------------------------------------------


@dataclass(frozen=True)
class WalkConfig:
    walks_per_node: int = 10
    walk_length: int = 80
    p: float = 0.25
    q: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.walks_per_node < 1:
            raise ValueError("walks_per_node must be positive")
        if self.walk_length < 2:
            raise ValueError("walk_length must be >= 2")
        if not (self.p > 0 and self.q > 0):
            raise ValueError("p and q must be positive")


@dataclass(frozen=True)
class MetaPathSet:
    paths: tuple[tuple[str, ...], ...] = DEFAULT_METAPATHS

    def __post_init__(self):
        for path in self.paths:
            if len(path) < 2:
                raise InvalidMetaPath(f"meta-path needs at least two types: {path}")
            for t in path:
                if t not in TYPE_CODE:
                    raise InvalidMetaPath(f"unknown node type {t!r} in {path}")
            for a, b in zip(path, path[1:]):
                if (a, b) not in EDGE_KINDS and (b, a) not in EDGE_KINDS:
                    raise InvalidMetaPath(f"no edge kind between {a!r} and {b!r} in {path}")


@dataclass
class WalkCorpus:
    """Walks as a flat int32 token array with offsets into it."""

    tokens: np.ndarray
    offsets: np.ndarray
    vocab: list[str]
    header: str = ""

    def __len__(self) -> int:
        return len(self.offsets) - 1

    def walk(self, i: int) -> np.ndarray:
        return self.tokens[self.offsets[i] : self.offsets[i + 1]]

    def __iter__(self):
        for i in range(len(self)):
            yield self.walk(i)

    def as_names(self) -> list[list[str]]:
        return [[self.vocab[t] for t in w] for w in self]

    @property
    def n_tokens(self) -> int:
        return int(self.offsets[-1])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# {self.header}\n")
            for w in self:
                fh.write(" ".join(self.vocab[t] for t in w) + "\n")

    @classmethod
    def load(cls, path) -> "WalkCorpus":
        vocab: list[str] = []
        lookup: dict[str, int] = {}
        tokens: list[int] = []
        offsets = [0]
        header = ""
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.startswith("#"):
                header = line[1:].strip()
                continue
            for name in line.split():
                if name not in lookup:
                    lookup[name] = len(vocab)
                    vocab.append(name)
                tokens.append(lookup[name])
            offsets.append(len(tokens))
        return cls(np.asarray(tokens, dtype=np.int32), np.asarray(offsets, dtype=np.int64), vocab, header)


def _pack(walks: np.ndarray, lengths: np.ndarray, vocab: list[str], header: str) -> WalkCorpus:
    mask = np.arange(walks.shape[1])[None, :] < lengths[:, None]
    offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(lengths)
    return WalkCorpus(walks[mask].astype(np.int32), offsets, vocab, header)


# -- kernels -------------------------------------------------------------------


@njit(cache=True)
def walk_seed(seed, node, walk):
    """Mix (seed, node, walk) into a 32-bit stream seed (splitmix64 finalizer)."""
    x = np.uint64(seed) * np.uint64(0x9E3779B97F4A7C15)
    x ^= np.uint64(node) + np.uint64(0x632BE59BD9B4E019) + (x << np.uint64(6)) + (x >> np.uint64(2))
    x ^= np.uint64(walk) + np.uint64(0x85EBCA77C2B2AE63) + (x << np.uint64(6)) + (x >> np.uint64(2))
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    x = x ^ (x >> np.uint64(31))
    return np.int64(x & np.uint64(0x7FFFFFFF))


@njit(cache=True)
def _is_neighbor(indptr, indices, types, a, b):
    # neighbor lists are sorted by (type, index)
    lo = indptr[a]
    hi = indptr[a + 1]
    tb = types[b]
    while lo < hi:
        mid = (lo + hi) // 2
        c = indices[mid]
        tc = types[c]
        if tc < tb or (tc == tb and c < b):
            lo = mid + 1
        else:
            hi = mid
    return lo < indptr[a + 1] and indices[lo] == b


@njit(parallel=True, cache=True)
def _node2vec_kernel(indptr, indices, types, starts, walks_per_node, walk_length, inv_p, inv_q, seed):
    n_starts = starts.shape[0]
    n_walks = n_starts * walks_per_node
    walks = np.full((n_walks, walk_length), -1, dtype=np.int32)
    lengths = np.zeros(n_walks, dtype=np.int64)
    for w in prange(n_walks):
        r = w // n_starts
        i = w % n_starts
        start = starts[i]
        np.random.seed(walk_seed(seed, start, r))
        walks[w, 0] = start
        length = 1
        prev = -1
        cur = start
        while length < walk_length:
            lo = indptr[cur]
            hi = indptr[cur + 1]
            deg = hi - lo
            if deg == 0:
                break
            if prev < 0:
                nxt = indices[lo + int(np.random.random() * deg)]
            else:
                total = 0.0
                for k in range(lo, hi):
                    x = indices[k]
                    if x == prev:
                        total += inv_p
                    elif _is_neighbor(indptr, indices, types, prev, x):
                        total += 1.0
                    else:
                        total += inv_q
                u = np.random.random() * total
                acc = 0.0
                nxt = indices[hi - 1]
                for k in range(lo, hi):
                    x = indices[k]
                    if x == prev:
                        acc += inv_p
                    elif _is_neighbor(indptr, indices, types, prev, x):
                        acc += 1.0
                    else:
                        acc += inv_q
                    if u < acc:
                        nxt = x
                        break
            walks[w, length] = nxt
            length += 1
            prev = cur
            cur = nxt
        lengths[w] = length
    return walks, lengths


@njit(parallel=True, cache=True)
def _metapath_kernel(typed_ptr, indices, starts, path_ids, path_types, path_lens, cyclic, walks_per_node, walk_length, seed):
    n_starts = starts.shape[0]
    n_walks = n_starts * walks_per_node
    walks = np.full((n_walks, walk_length), -1, dtype=np.int32)
    lengths = np.zeros(n_walks, dtype=np.int64)
    for w in prange(n_walks):
        r = w // n_starts
        i = w % n_starts
        start = starts[i]
        pid = path_ids[i]
        plen = path_lens[pid]
        # cyclic paths (first type == last type) repeat over path[:-1]
        period = plen - 1 if cyclic[pid] else plen
        np.random.seed(walk_seed(seed, start + np.int64(pid) * np.int64(1 << 32), r))
        walks[w, 0] = start
        length = 1
        cur = start
        while length < walk_length:
            if not cyclic[pid] and length >= plen:
                break
            t = path_types[pid, length % period]
            lo = typed_ptr[cur, t]
            hi = typed_ptr[cur, t + 1]
            if hi == lo:
                break
            cur = indices[lo + int(np.random.random() * (hi - lo))]
            walks[w, length] = cur
            length += 1
        lengths[w] = length
    return walks, lengths


def _set_threads(threads: int) -> None:
    numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))


def node2vec_walks(g: HeteroGraph, cfg: WalkConfig, threads: int = 1) -> WalkCorpus:
    """Second-order biased walks: weight 1/p to return, 1 to a common neighbor, 1/q otherwise.

    Every node starts ``walks_per_node`` walks; isolated nodes yield
    length-1 walks. Walks are ordered by walk index, then node index.
    """
    if g.n_nodes == 0:
        raise ValueError("cannot walk an empty graph")
    _set_threads(threads)
    starts = np.arange(g.n_nodes, dtype=np.int64)
    walks, lengths = _node2vec_kernel(
        g.indptr, g.indices, g.types, starts, cfg.walks_per_node, cfg.walk_length, 1.0 / cfg.p, 1.0 / cfg.q, cfg.seed
    )
    header = (
        f"node2vec walks_per_node={cfg.walks_per_node} walk_length={cfg.walk_length} "
        f"p={cfg.p} q={cfg.q} seed={cfg.seed}"
    )
    return _pack(walks, lengths, g.names, header)


def metapath_walks(g: HeteroGraph, paths: MetaPathSet, cfg: WalkConfig, threads: int = 1) -> WalkCorpus:
    """Type-constrained walks, uniform over the admissible neighbors at each step.

    Each path contributes ``walks_per_node`` walks from every node of its first
    type. A walk stops early (and is kept) when no neighbor has the required
    type. ``cfg.p`` and ``cfg.q`` are ignored.
    """
    n_paths = len(paths.paths)
    max_len = max(len(p) for p in paths.paths)
    path_types = np.zeros((n_paths, max_len), dtype=np.int64)
    path_lens = np.zeros(n_paths, dtype=np.int64)
    cyclic = np.zeros(n_paths, dtype=np.bool_)
    starts, path_ids = [], []
    for k, path in enumerate(paths.paths):
        path_types[k, : len(path)] = [TYPE_CODE[t] for t in path]
        path_lens[k] = len(path)
        cyclic[k] = path[0] == path[-1]
        first = g.nodes_of_type(path[0])
        if len(first) == 0:
            raise NoAdmissibleStart(f"no {path[0]!r} nodes to start meta-path {list(path)}")
        starts.append(first)
        path_ids.append(np.full(len(first), k))
    starts_arr = np.concatenate(starts).astype(np.int64)
    pid_arr = np.concatenate(path_ids).astype(np.int64)
    _set_threads(threads)
    walks, lengths = _metapath_kernel(
        g.typed_ptr, g.indices, starts_arr, pid_arr, path_types, path_lens, cyclic,
        cfg.walks_per_node, cfg.walk_length, cfg.seed,
    )
    spec = ";".join("-".join(p) for p in paths.paths)
    header = f"metapath paths={spec} walks_per_node={cfg.walks_per_node} walk_length={cfg.walk_length} seed={cfg.seed}"
    return _pack(walks, lengths, g.names, header)


def type_sequence(g: HeteroGraph, walk: Sequence[int]) -> list[str]:
    return [NODE_TYPES[g.types[v]] for v in walk]
