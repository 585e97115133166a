"""Cluster topic words: class-based TF-IDF and maximal-marginal-relevance re-ranking."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cluster import ClusterAssignment
from .datamodel import Dataset
from .embed import EmbeddingMatrix, tokenize


class EmptyVocabulary(ValueError):
    pass


@dataclass
class TopicModel:
    topics: dict[int, list[tuple[str, float]]]
    term_freq: dict[int, Counter]
    corpus_freq: Counter
    avg_words: float
    vocabulary: list[str] = field(default_factory=list)

    def weight(self, term: str, cluster: int) -> float:
        tf = self.term_freq[cluster].get(term, 0)
        return ctfidf_weight(tf, self.corpus_freq[term], self.avg_words) if tf else 0.0

    def to_json(self) -> str:
        """Topics plus the tf / f / A tables their weights were computed from."""
        payload = {
            "topics": {str(c): [{"term": t, "weight": w} for t, w in terms] for c, terms in sorted(self.topics.items())},
            "tables": {
                "avg_words": self.avg_words,
                "corpus_freq": dict(sorted(self.corpus_freq.items())),
                "term_freq": {str(c): dict(sorted(tf.items())) for c, tf in sorted(self.term_freq.items())},
            },
        }
        return json.dumps(payload, indent=2, ensure_ascii=False)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "TopicModel":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        tables = raw["tables"]
        return cls(
            topics={int(c): [(e["term"], float(e["weight"])) for e in terms] for c, terms in raw["topics"].items()},
            term_freq={int(c): Counter(tf) for c, tf in tables["term_freq"].items()},
            corpus_freq=Counter(tables["corpus_freq"]),
            avg_words=float(tables["avg_words"]),
            vocabulary=sorted(tables["corpus_freq"]),
        )


def ctfidf_weight(tf: float, corpus_freq: float, avg_words: float) -> float:
    """``tf * log(1 + A / f)`` with A the average word count per class."""
    return tf * math.log(1.0 + avg_words / corpus_freq)


def ctfidf(assignment: ClusterAssignment, ds: Dataset, top_n: int = 10) -> TopicModel:
    """Rank each cluster's terms by class-based TF-IDF; noise posts are ignored.

    Ties in weight are ordered alphabetically.
    """
    term_freq: dict[int, Counter] = {}
    for pid, label in zip(assignment.post_ids, assignment.labels.tolist()):
        if label < 0:
            continue
        term_freq.setdefault(label, Counter()).update(tokenize(ds.post(pid).text))
    if not term_freq:
        raise EmptyVocabulary("no non-noise clusters to describe")
    corpus_freq: Counter = Counter()
    for counts in term_freq.values():
        corpus_freq.update(counts)
    if not corpus_freq:
        raise EmptyVocabulary("clusters contain no tokens")
    avg_words = sum(corpus_freq.values()) / len(term_freq)
    topics = {}
    for label, counts in sorted(term_freq.items()):
        scored = [(t, ctfidf_weight(tf, corpus_freq[t], avg_words)) for t, tf in counts.items()]
        scored.sort(key=lambda tw: (-tw[1], tw[0]))
        topics[label] = scored[:top_n]
    return TopicModel(topics, term_freq, corpus_freq, avg_words, sorted(corpus_freq))


def mmr_rerank(topic_terms: Sequence[tuple[str, float]], term_vectors: EmbeddingMatrix,
               lam: float = 0.5, top_n: int = 10) -> list[tuple[str, float]]:
    """Greedy maximal marginal relevance.

    Relevance is the term weight scaled by the largest weight, similarity is
    cosine between term vectors. Each step picks the candidate maximizing
    ``lam * relevance - (1 - lam) * max similarity to the already picked``;
    earlier candidates win ties.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if not topic_terms:
        return []
    terms = [t for t, _ in topic_terms]
    weights = np.array([w for _, w in topic_terms], dtype=np.float64)
    top = weights.max()
    relevance = weights / top if top > 0 else np.zeros_like(weights)
    vecs = term_vectors.take(terms).values
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    unit = np.divide(vecs, norms, out=np.zeros_like(vecs), where=norms > 0)
    sim = unit @ unit.T
    chosen = [int(np.argmax(relevance))]
    while len(chosen) < min(top_n, len(terms)):
        redundancy = sim[:, chosen].max(axis=1)
        score = lam * relevance - (1.0 - lam) * redundancy
        score[chosen] = -np.inf
        chosen.append(int(np.argmax(score)))
    return [topic_terms[i] for i in chosen]
