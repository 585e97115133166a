"""Dense embeddings: skip-gram with negative sampling, PV-DBOW, external vectors, PCA.

The SGNS learner serves both node embeddings (over walk corpora) and the
document route (PV-DBOW: each document id predicts its own words, with
interleaved word skip-gram so word vectors are trained in the same pass).
"""

from __future__ import annotations

import gzip
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from numba import njit, prange

from .datamodel import Dataset
from .graph import WalkCorpus, _set_threads


class DegenerateVocabulary(ValueError):
    pass


class MissingRows(KeyError):
    def __init__(self, ids):
        self.ids = list(ids)
        super().__init__(f"{len(self.ids)} ids missing from embedding file: {self.ids[:10]}")


class MalformedVectors(ValueError):
    pass


class DimensionMismatch(MalformedVectors):
    pass


class RowMismatch(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingMatrix:
    row_ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != len(self.row_ids):
            raise DimensionMismatch(f"values shape {values.shape} does not match {len(self.row_ids)} row ids")
        if not np.all(np.isfinite(values)):
            raise ValueError("embedding contains NaN or infinite entries")
        if len(set(self.row_ids)) != len(self.row_ids):
            raise ValueError("row ids must be unique")
        object.__setattr__(self, "row_ids", tuple(self.row_ids))
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return len(self.row_ids)

    def index(self) -> dict[str, int]:
        return {r: i for i, r in enumerate(self.row_ids)}

    def row(self, row_id: str) -> np.ndarray:
        return self.values[self.row_ids.index(row_id)]

    def take(self, ids: Sequence[str], rename: Optional[Sequence[str]] = None) -> "EmbeddingMatrix":
        lookup = self.index()
        missing = [i for i in ids if i not in lookup]
        if missing:
            raise MissingRows(missing)
        rows = [lookup[i] for i in ids]
        return EmbeddingMatrix(tuple(rename if rename is not None else ids), self.values[rows])

    def save(self, path) -> None:
        """Write the text vectors format with round-trip exact floats."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"dim={self.dim} count={len(self)}\n")
            for rid, vec in zip(self.row_ids, self.values):
                fh.write(rid + " " + " ".join(repr(float(v)) for v in vec) + "\n")

    @classmethod
    def load(cls, path) -> "EmbeddingMatrix":
        ids, rows = _read_vectors(Path(path))
        return cls(tuple(ids), _stack(rows))


@dataclass(frozen=True)
class SgnsConfig:
    dim: int = 64
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


# -- SGNS kernels ----------------------------------------------------------------


@njit(cache=True, fastmath=False)
def _sgd_pair(syn0, syn1, inp, out, cum_table, negatives, alpha, neu1e):
    dim = syn0.shape[1]
    for j in range(dim):
        neu1e[j] = 0.0
    loss = 0.0
    total = cum_table[-1]
    for d in range(negatives + 1):
        if d == 0:
            target = out
            label = 1.0
        else:
            target = np.searchsorted(cum_table, np.random.random() * total, side="right")
            if target >= cum_table.shape[0]:
                target = cum_table.shape[0] - 1
            if target == out:
                continue
            label = 0.0
        f = 0.0
        for j in range(dim):
            f += syn0[inp, j] * syn1[target, j]
        if f > 30.0:
            sig = 1.0
        elif f < -30.0:
            sig = 0.0
        else:
            sig = 1.0 / (1.0 + math.exp(-f))
        if label > 0.5:
            loss -= math.log(max(sig, 1e-12))
        else:
            loss -= math.log(max(1.0 - sig, 1e-12))
        g = (label - sig) * alpha
        for j in range(dim):
            neu1e[j] += g * syn1[target, j]
            syn1[target, j] += g * syn0[inp, j]
    for j in range(dim):
        syn0[inp, j] += neu1e[j]
    return loss


@njit(cache=True)
def _train_range(s_lo, s_hi, tokens, offsets, doc_rows, syn0, syn1, cum_table, window, negatives,
                 alpha0, alpha_min, done0, total_words, seed, train_words):
    np.random.seed(seed)
    neu1e = np.zeros(syn0.shape[1])
    loss = 0.0
    pairs = 0
    done = done0
    for s in range(s_lo, s_hi):
        lo = offsets[s]
        hi = offsets[s + 1]
        doc = doc_rows[s]
        for pos in range(lo, hi):
            alpha = alpha0 - (alpha0 - alpha_min) * done / total_words
            if alpha < alpha_min:
                alpha = alpha_min
            done += 1
            word = tokens[pos]
            if doc >= 0:
                loss += _sgd_pair(syn0, syn1, doc, word, cum_table, negatives, alpha, neu1e)
                pairs += 1
            if train_words:
                b = np.random.randint(0, window)
                reach = window - b
                for c in range(max(lo, pos - reach), min(hi, pos + reach + 1)):
                    if c == pos:
                        continue
                    loss += _sgd_pair(syn0, syn1, word, tokens[c], cum_table, negatives, alpha, neu1e)
                    pairs += 1
    return loss, pairs


@njit(parallel=True, cache=True)
def _train_parallel(chunk_bounds, chunk_done, tokens, offsets, doc_rows, syn0, syn1, cum_table, window,
                    negatives, alpha0, alpha_min, total_words, seed, train_words):
    n_chunks = chunk_bounds.shape[0] - 1
    losses = np.zeros(n_chunks)
    pairs = np.zeros(n_chunks, dtype=np.int64)
    for c in prange(n_chunks):
        loss, n = _train_range(chunk_bounds[c], chunk_bounds[c + 1], tokens, offsets, doc_rows, syn0, syn1,
                               cum_table, window, negatives, alpha0, alpha_min, chunk_done[c], total_words,
                               seed + c, train_words)
        losses[c] = loss
        pairs[c] = n
    return losses.sum(), pairs.sum()


@dataclass
class SgnsModel:
    """Trained SGNS weights.

    Token vectors are exported as input + output vectors; documents only have
    input vectors.
    """

    vocab: list[str]
    input_vectors: np.ndarray
    output_vectors: np.ndarray
    doc_ids: list[str] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)

    def word_matrix(self) -> EmbeddingMatrix:
        n = len(self.vocab)
        return EmbeddingMatrix(tuple(self.vocab), self.input_vectors[:n] + self.output_vectors)

    def doc_matrix(self) -> EmbeddingMatrix:
        return EmbeddingMatrix(tuple(self.doc_ids), self.input_vectors[len(self.vocab) :])


def _fit(tokens, offsets, doc_rows, vocab, doc_ids, cfg: SgnsConfig, train_words: bool) -> SgnsModel:
    n_vocab = len(vocab)
    counts = np.bincount(tokens, minlength=n_vocab).astype(np.float64)
    cum_table = np.cumsum(counts**0.75)
    rng = np.random.default_rng(cfg.seed)
    n_rows = n_vocab + len(doc_ids)
    syn0 = (rng.random((n_rows, cfg.dim)) - 0.5) / cfg.dim
    syn1 = np.zeros((n_vocab, cfg.dim))
    n_sent = len(offsets) - 1
    total_words = max(1, int(offsets[-1]) * cfg.epochs)
    alpha_min = cfg.learning_rate * 1e-4
    losses = []
    threads = max(1, cfg.threads)
    for epoch in range(cfg.epochs):
        done0 = epoch * int(offsets[-1])
        epoch_seed = (cfg.seed * 1_000_003 + epoch * 7919) % (2**31 - 1)
        if threads == 1:
            loss, pairs = _train_range(0, n_sent, tokens, offsets, doc_rows, syn0, syn1, cum_table, cfg.window,
                                       cfg.negatives, cfg.learning_rate, alpha_min, done0, total_words,
                                       epoch_seed, train_words)
        else:
            _set_threads(threads)
            bounds = np.linspace(0, n_sent, threads * 4 + 1).astype(np.int64)
            chunk_done = done0 + offsets[bounds[:-1]]
            loss, pairs = _train_parallel(bounds, chunk_done, tokens, offsets, doc_rows, syn0, syn1, cum_table,
                                          cfg.window, cfg.negatives, cfg.learning_rate, alpha_min, total_words,
                                          epoch_seed, train_words)
        losses.append(loss / max(pairs, 1))
    return SgnsModel(list(vocab), syn0, syn1, list(doc_ids), losses)


def _encode(sentences: Iterable[Sequence[str]]):
    vocab: list[str] = []
    lookup: dict[str, int] = {}
    tokens: list[int] = []
    offsets = [0]
    for sent in sentences:
        for tok in sent:
            if tok not in lookup:
                lookup[tok] = len(vocab)
                vocab.append(tok)
            tokens.append(lookup[tok])
        offsets.append(len(tokens))
    return np.asarray(tokens, dtype=np.int64), np.asarray(offsets, dtype=np.int64), vocab


def train_sgns(corpus, cfg: SgnsConfig = SgnsConfig()) -> SgnsModel:
    """Skip-gram with negative sampling over walks or token lists.

    ``corpus`` is a :class:`WalkCorpus` or any iterable of token sequences.
    Learning rate decays linearly to 1e-4 of its start value; negatives are
    drawn from the unigram distribution raised to 0.75.
    """
    if isinstance(corpus, WalkCorpus):
        # first-appearance order, so a corpus re-read from disk trains identically
        uniq, first = np.unique(corpus.tokens, return_index=True)
        used = uniq[np.argsort(first, kind="stable")]
        remap = np.full(len(corpus.vocab), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        tokens = remap[corpus.tokens]
        offsets = corpus.offsets.astype(np.int64)
        vocab = [corpus.vocab[i] for i in used]
    else:
        tokens, offsets, vocab = _encode(corpus)
    if len(vocab) < 2:
        raise DegenerateVocabulary(f"vocabulary has {len(vocab)} token(s); need at least 2")
    doc_rows = np.full(len(offsets) - 1, -1, dtype=np.int64)
    return _fit(tokens, offsets, doc_rows, vocab, [], cfg, train_words=True)


# -- documents -----------------------------------------------------------------

_URL = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)


def tokenize(text: str) -> list[str]:
    """Lowercase, drop URLs, split on whitespace. Hashtags stay tokens."""
    return _URL.sub(" ", text.lower()).split()


def train_pv_dbow(ds: Dataset, cfg: SgnsConfig = SgnsConfig()) -> SgnsModel:
    """PV-DBOW with interleaved word skip-gram.

    Documents with no tokens are left out of training; :func:`pv_dbow` gives
    them a zero row.
    """
    docs = [(p.post_id, tokenize(p.text)) for p in ds.posts]
    docs = [(pid, toks) for pid, toks in docs if toks]
    tokens, offsets, vocab = _encode(toks for _, toks in docs)
    if len(vocab) < 2:
        raise DegenerateVocabulary(f"vocabulary has {len(vocab)} token(s); need at least 2")
    doc_rows = np.arange(len(vocab), len(vocab) + len(docs), dtype=np.int64)
    return _fit(tokens, offsets, doc_rows, vocab, [pid for pid, _ in docs], cfg, train_words=True)


def pv_dbow(ds: Dataset, cfg: SgnsConfig = SgnsConfig(), model: Optional[SgnsModel] = None) -> EmbeddingMatrix:
    model = model if model is not None else train_pv_dbow(ds, cfg)
    trained = model.doc_matrix()
    lookup = trained.index()
    values = np.zeros((len(ds.posts), trained.dim))
    for i, post in enumerate(ds.posts):
        j = lookup.get(post.post_id)
        if j is not None:
            values[i] = trained.values[j]
    return EmbeddingMatrix(tuple(ds.post_ids), values)


def node_embeddings_for_posts(model: SgnsModel, post_ids: Sequence[str]) -> EmbeddingMatrix:
    """Slice the post rows out of a node embedding, renamed to bare post ids."""
    words = model.word_matrix()
    return words.take([f"post:{pid}" for pid in post_ids], rename=list(post_ids))


# -- external vectors ------------------------------------------------------------


def _open_text(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, encoding="utf-8")


def _stack(rows: list[np.ndarray]) -> np.ndarray:
    if not rows:
        return np.zeros((0, 0))
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DimensionMismatch(f"rows have inconsistent widths: {sorted(widths)}")
    return np.vstack(rows)


def _read_vectors(path: Path) -> tuple[list[str], list[np.ndarray]]:
    ids: list[str] = []
    rows: list[np.ndarray] = []
    with _open_text(path) as fh:
        lines = (ln for ln in fh if ln.strip())
        first = next(lines, None)
        if first is None:
            return ids, rows
        if first.lstrip().startswith("{"):
            for lineno, line in enumerate([first, *lines], start=1):
                try:
                    obj = json.loads(line)
                    ids.append(str(obj["id"]))
                    rows.append(np.asarray(obj["vector"], dtype=np.float64))
                except (ValueError, KeyError, TypeError) as exc:
                    raise MalformedVectors(f"{path}: record {lineno}: {exc}") from None
            return ids, rows
        try:
            header = dict(part.split("=", 1) for part in first.split())
            dim, count = int(header["dim"]), int(header["count"])
        except (ValueError, KeyError):
            raise MalformedVectors(f"{path}: expected a 'dim=<d> count=<n>' header, got {first.strip()[:60]!r}") from None
        for line in lines:
            parts = line.split()
            ids.append(parts[0])
            try:
                vec = np.asarray([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError:
                raise MalformedVectors(f"{path}: non-numeric value in row {parts[0]!r}") from None
            if len(vec) != dim:
                raise DimensionMismatch(f"row {parts[0]!r} has {len(vec)} values, header says dim={dim}")
            rows.append(vec)
        if len(ids) != count:
            raise MalformedVectors(f"header says count={count} but file holds {len(ids)} rows")
    return ids, rows


def load_external_embeddings(path, expected_ids: Sequence[str]) -> EmbeddingMatrix:
    """Read precomputed vectors and reorder them to ``expected_ids``.

    Accepts the text format (``dim=<d> count=<n>`` header, then
    ``id v1 ... vd``) or JSON-lines ``{"id": ..., "vector": [...]}``, either
    optionally gzipped. Extra rows are ignored.
    """
    ids, rows = _read_vectors(Path(path))
    matrix = EmbeddingMatrix(tuple(ids), _stack(rows))
    return matrix.take(list(expected_ids))


# -- PCA -------------------------------------------------------------------------


@dataclass(frozen=True)
class PCAResult:
    matrix: EmbeddingMatrix
    components: np.ndarray  # (target_dim, dim), zero rows beyond the rank
    explained_variance_ratio: np.ndarray
    rank: int

    @property
    def padded(self) -> bool:
        return self.rank < self.components.shape[0]


def pca(m: EmbeddingMatrix, target_dim: int) -> PCAResult:
    """Center rows and project them on the leading principal directions.

    Directions beyond the numerical rank (or beyond ``min(rows, dim)``) come
    back as zero columns with zero explained variance. Component signs are
    fixed so the largest-magnitude loading is positive.
    """
    if target_dim < 1:
        raise ValueError("target_dim must be positive")
    x = m.values - m.values.mean(axis=0) if len(m) else m.values
    n, d = x.shape
    components = np.zeros((target_dim, d))
    ratios = np.zeros(target_dim)
    rank = 0
    if n and d:
        _, s, vt = np.linalg.svd(x, full_matrices=False)
        tol = max(n, d) * np.finfo(float).eps * (s[0] if len(s) else 0.0)
        rank = int(np.sum(s > tol))
        keep = min(rank, target_dim)
        vt = vt[:keep]
        flip = np.sign(vt[np.arange(keep), np.argmax(np.abs(vt), axis=1)])
        components[:keep] = vt * flip[:, None]
        total = float(np.sum(s**2))
        if total > 0:
            ratios[:keep] = s[:keep] ** 2 / total
    projected = x @ components.T
    return PCAResult(EmbeddingMatrix(m.row_ids, projected), components, ratios, rank)


def pca_reduce(m: EmbeddingMatrix, target_dim: int) -> EmbeddingMatrix:
    return pca(m, target_dim).matrix


def l2_normalize_rows(values: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(values, axis=1, keepdims=True)
    return np.divide(values, norms, out=np.zeros_like(values), where=norms > 0)


def concat_align(text: EmbeddingMatrix, network: EmbeddingMatrix, target_dim: int = 64) -> EmbeddingMatrix:
    """Reduce both modalities to ``target_dim``, unit-normalize rows, concatenate.

    Rows of ``network`` are matched to ``text`` by id.
    """
    if set(text.row_ids) != set(network.row_ids) or len(text) != len(network):
        raise RowMismatch("text and network embeddings must cover the same row ids")
    if network.row_ids != text.row_ids:
        network = network.take(text.row_ids)
    a = l2_normalize_rows(pca_reduce(text, target_dim).values)
    b = l2_normalize_rows(pca_reduce(network, target_dim).values)
    return EmbeddingMatrix(text.row_ids, np.hstack([a, b]))


def reduce_normalize(m: EmbeddingMatrix, target_dim: int = 64) -> EmbeddingMatrix:
    """Single-modality counterpart of :func:`concat_align`."""
    return EmbeddingMatrix(m.row_ids, l2_normalize_rows(pca_reduce(m, target_dim).values))
