"""End-to-end pipeline: embeddings -> semantic clusters -> temporal split -> reports.

``Workspace`` memoizes every intermediate result for one dataset and one
configuration, so ablation rows and epsilon sweeps share embeddings and
semantic clusterings instead of retraining them.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .cluster import (ClusterAssignment, TemporalParams, default_k, drop_singletons, hdbscan_simplified, kmeans,
                      temporal_subdivide)
from .datamodel import Dataset, IngestConfig, ingest
from .embed import (EmbeddingMatrix, SgnsConfig, SgnsModel, concat_align, load_external_embeddings,
                    node_embeddings_for_posts, pv_dbow, reduce_normalize, train_pv_dbow, train_sgns)
from .evaluate import EvaluationReport, evaluate
from .graph import DEFAULT_METAPATHS, HeteroGraph, MetaPathSet, WalkConfig, WalkCorpus, build_graph, metapath_walks, \
    node2vec_walks
from .topics import TopicModel, ctfidf, mmr_rerank

logger = logging.getLogger(__name__)

TEXT_NAMES = {"pvdbow": "Doc2Vec", "external": "BERTopic"}
NETWORK_NAMES = {"none": "", "n2v": "N2V", "mp2v": "MP2V"}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass(frozen=True)
class MethodConfig:
    """One row of the ablation grid."""

    text: str = "pvdbow"
    network: str = "none"
    temporal: bool = False

    def __post_init__(self):
        if self.text not in TEXT_NAMES:
            raise ValueError(f"text must be one of {sorted(TEXT_NAMES)}")
        if self.network not in NETWORK_NAMES:
            raise ValueError(f"network must be one of {sorted(NETWORK_NAMES)}")

    @property
    def name(self) -> str:
        parts = [TEXT_NAMES[self.text]]
        if self.temporal:
            parts.append("PostTime")
        if self.network != "none":
            parts.append(NETWORK_NAMES[self.network])
        return "+".join(parts)

    @property
    def base(self) -> "MethodConfig":
        return dataclasses.replace(self, temporal=False)

    @classmethod
    def parse(cls, name: str) -> "MethodConfig":
        parts = [p.strip().lower() for p in name.split("+")]
        lookup_text = {v.lower(): k for k, v in TEXT_NAMES.items()}
        if parts[0] not in lookup_text:
            raise ValueError(f"unknown method {name!r}")
        text, temporal, network = lookup_text[parts[0]], False, "none"
        for p in parts[1:]:
            if p == "posttime":
                temporal = True
            elif p in ("n2v", "mp2v"):
                network = p
            else:
                raise ValueError(f"unknown method component {p!r} in {name!r}")
        return cls(text, network, temporal)


def table2_grid() -> list[MethodConfig]:
    rows = []
    for network in ("none", "n2v", "mp2v"):
        for text in ("pvdbow", "external"):
            for temporal in (False, True):
                rows.append(MethodConfig(text, network, temporal))
    return rows


@dataclass
class PipelineConfig:
    """Flat pipeline settings; every field is a key of the config file."""

    data_dir: str = ""
    posts: str = ""
    videos: str = ""
    channels: str = ""
    vectors: str = ""
    output_dir: str = "coordwatch-out"
    strict: bool = False

    text: str = "pvdbow"
    network: str = "n2v"
    temporal: bool = True

    seed: int = 0
    threads: int = 1

    text_dim: int = 64
    text_window: int = 5
    text_negatives: int = 5
    text_epochs: int = 5
    learning_rate: float = 0.025

    node_dim: int = 128
    node_window: int = 5
    node_negatives: int = 5
    node_epochs: int = 5
    walks_per_node: int = 10
    walk_length: int = 80
    p: float = 0.25
    q: float = 4.0
    metapaths: str = ";".join(",".join(path) for path in DEFAULT_METAPATHS)

    align_dim: int = 64
    kmeans_k: int = 0
    hdbscan_min_cluster_size: int = 2
    hdbscan_min_samples: int = 1
    epsilon_seconds: float = 52.0
    min_pts: int = 2

    top_n_terms: int = 10
    mmr_lambda: float = 0.5
    top_channels: int = 10
    silhouette_max_points: int = 50_000
    silhouette_sample: int = 10_000
    figures: bool = True

    @property
    def method(self) -> MethodConfig:
        return MethodConfig(self.text, self.network, self.temporal)

    def input_paths(self) -> tuple[Path, Path, Path]:
        base = Path(self.data_dir) if self.data_dir else None

        def pick(explicit: str, default: str) -> Path:
            if explicit:
                return Path(explicit)
            if base is None:
                raise ValueError(f"no path for {default}: set data_dir or the explicit key")
            return base / default

        return pick(self.posts, "posts.jsonl"), pick(self.videos, "videos.jsonl"), pick(self.channels, "channels.csv")

    def vectors_path(self) -> Optional[Path]:
        if self.vectors:
            return Path(self.vectors)
        if self.data_dir:
            for name in ("sentence_vectors.txt.gz", "sentence_vectors.txt", "sentence_vectors.jsonl"):
                candidate = Path(self.data_dir) / name
                if candidate.exists():
                    return candidate
        return None

    def text_sgns(self) -> SgnsConfig:
        return SgnsConfig(self.text_dim, self.text_window, self.text_negatives, self.text_epochs,
                          self.learning_rate, self.seed, self.threads)

    def node_sgns(self) -> SgnsConfig:
        return SgnsConfig(self.node_dim, self.node_window, self.node_negatives, self.node_epochs,
                          self.learning_rate, self.seed, self.threads)

    def walk_config(self) -> WalkConfig:
        return WalkConfig(self.walks_per_node, self.walk_length, self.p, self.q, self.seed)

    def metapath_set(self) -> MetaPathSet:
        return MetaPathSet(tuple(tuple(t.strip() for t in path.split(",")) for path in self.metapaths.split(";")))

    def temporal_params(self, epsilon: Optional[float] = None) -> TemporalParams:
        return TemporalParams(self.epsilon_seconds if epsilon is None else epsilon, self.min_pts)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def dumps(self) -> str:
        lines = ["[pipeline]"]
        for f in fields(self):
            lines.append(f"{f.name} = {_to_text(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            default = known[key].default
            kwargs[key] = _coerce(raw, type(default))
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        text = Path(path).read_text(encoding="utf-8")
        if not text.lstrip().startswith("["):
            text = "[pipeline]\n" + text
        parser = configparser.ConfigParser(interpolation=None)
        parser.read_string(text)
        if not parser.has_section("pipeline"):
            raise ValueError(f"{path}: expected a [pipeline] section")
        return cls.from_mapping(dict(parser.items("pipeline")))


def _to_text(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(raw, kind):
    if not isinstance(raw, str):
        return kind(raw)
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return kind(raw.strip())


# -- workspace --------------------------------------------------------------------


class Workspace:
    """Lazily computed intermediates for one dataset under one configuration."""

    def __init__(self, cfg: PipelineConfig, ds: Optional[Dataset] = None, cache_dir=None):
        self.cfg = cfg
        self._ds = ds
        self._memo: dict = {}
        self.timings: dict[str, float] = {}
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.cache_hits: list[str] = []

    def _get(self, key, compute):
        if key not in self._memo:
            t0 = time.perf_counter()
            self._memo[key] = compute()
            self.timings[str(key)] = time.perf_counter() - t0
        return self._memo[key]

    @property
    def dataset(self) -> Dataset:
        if self._ds is None:
            posts, videos, channels = self.cfg.input_paths()
            self._ds = ingest(posts, videos, channels, IngestConfig(strict=self.cfg.strict))
        return self._ds

    def fingerprint(self) -> str:
        return self._get("fingerprint", lambda: dataset_fingerprint(self.dataset))

    def _disk(self, kind: str, keys: tuple, compute, load, save):
        """Persist ``compute()`` under the cache dir, keyed by data and config."""
        if self.cache_dir is None:
            return compute()
        blob = json.dumps([self.fingerprint(), kind, *keys], sort_keys=True, default=str)
        path = self.cache_dir / f"{kind}-{hashlib.sha256(blob.encode()).hexdigest()[:16]}.txt"
        if path.exists():
            self.cache_hits.append(kind)
            return load(path)
        value = compute()
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        save(value, tmp)
        tmp.replace(path)
        return value

    def _text_keys(self) -> tuple:
        c = self.cfg
        return (c.text_dim, c.text_window, c.text_negatives, c.text_epochs, c.learning_rate, c.seed, c.threads)

    def _walk_keys(self, network: str) -> tuple:
        c = self.cfg
        keys = (network, c.walks_per_node, c.walk_length, c.seed, c.threads)
        return keys + ((c.p, c.q) if network == "n2v" else (c.metapaths,))

    def text_model(self) -> SgnsModel:
        return self._get("text_model", lambda: train_pv_dbow(self.dataset, self.cfg.text_sgns()))

    def text_embedding(self, text: str) -> EmbeddingMatrix:
        def compute():
            if text == "pvdbow":
                return self._disk("pvdbow", self._text_keys(),
                                  lambda: pv_dbow(self.dataset, self.cfg.text_sgns(), self.text_model()),
                                  EmbeddingMatrix.load, EmbeddingMatrix.save)
            path = self.cfg.vectors_path()
            if path is None:
                raise FileNotFoundError("the external text route needs a vectors file (config key 'vectors')")
            return load_external_embeddings(path, self.dataset.post_ids)

        return self._get(("text", text), compute)

    def word_vectors(self) -> EmbeddingMatrix:
        """PV-DBOW token vectors, used to re-rank topic words."""
        return self._get("word_vectors", lambda: self._disk(
            "words", self._text_keys(), lambda: self.text_model().word_matrix(),
            EmbeddingMatrix.load, EmbeddingMatrix.save))

    def graph(self) -> HeteroGraph:
        return self._get("graph", lambda: build_graph(self.dataset))

    def walks(self, network: str) -> WalkCorpus:
        def compute():
            if network == "n2v":
                return node2vec_walks(self.graph(), self.cfg.walk_config(), self.cfg.threads)
            return metapath_walks(self.graph(), self.cfg.metapath_set(), self.cfg.walk_config(), self.cfg.threads)

        return self._get(("walks", network),
                         lambda: self._disk("walks", self._walk_keys(network), compute, WalkCorpus.load,
                                            WalkCorpus.save))

    def node_model(self, network: str) -> SgnsModel:
        return self._get(("node_model", network), lambda: train_sgns(self.walks(network), self.cfg.node_sgns()))

    def network_embedding(self, network: str) -> EmbeddingMatrix:
        c = self.cfg
        keys = self._walk_keys(network) + (c.node_dim, c.node_window, c.node_negatives, c.node_epochs,
                                           c.learning_rate)
        return self._get(("network", network), lambda: self._disk(
            "nodes", keys, lambda: node_embeddings_for_posts(self.node_model(network), self.dataset.post_ids),
            EmbeddingMatrix.load, EmbeddingMatrix.save))

    def features(self, text: str, network: str) -> EmbeddingMatrix:
        def compute():
            t = self.text_embedding(text)
            if network == "none":
                return reduce_normalize(t, self.cfg.align_dim)
            return concat_align(t, self.network_embedding(network), self.cfg.align_dim)

        return self._get(("features", text, network), compute)

    def kmeans_k(self) -> int:
        return self.cfg.kmeans_k or default_k(len(self.dataset))

    def semantic(self, text: str, network: str) -> ClusterAssignment:
        def compute():
            feats = self.features(text, network)
            if text == "pvdbow":
                return kmeans(feats, self.kmeans_k(), self.cfg.seed)
            return hdbscan_simplified(feats, self.cfg.hdbscan_min_cluster_size, self.cfg.hdbscan_min_samples)

        return self._get(("semantic", text, network), compute)

    def temporal(self, method: MethodConfig, epsilon: Optional[float] = None) -> ClusterAssignment:
        eps = self.cfg.epsilon_seconds if epsilon is None else epsilon
        return self._get(("temporal", method.text, method.network, eps),
                         lambda: temporal_subdivide(self.semantic(method.text, method.network), self.dataset,
                                                    self.cfg.temporal_params(eps)))

    def final(self, method: MethodConfig, epsilon: Optional[float] = None) -> ClusterAssignment:
        """Assignment after the optional temporal split and singleton dropping."""
        def compute():
            if method.temporal:
                before = self.temporal(method, epsilon)
            else:
                before = self.semantic(method.text, method.network)
            out = drop_singletons(before)
            out.meta["clusters_before_drop"] = before.n_clusters
            return out

        eps = self.cfg.epsilon_seconds if epsilon is None else epsilon
        return self._get(("final", method, eps if method.temporal else None), compute)

    def topics(self, method: MethodConfig) -> Optional[TopicModel]:
        def compute():
            final = self.final(method)
            if final.n_clusters == 0:
                return None
            model = ctfidf(final, self.dataset, top_n=max(3 * self.cfg.top_n_terms, self.cfg.top_n_terms))
            words = self.word_vectors()
            for label, terms in model.topics.items():
                model.topics[label] = mmr_rerank(terms, words, self.cfg.mmr_lambda, self.cfg.top_n_terms)
            return model

        return self._get(("topics", method), compute)

    def report(self, method: MethodConfig, epsilon: Optional[float] = None) -> EvaluationReport:
        def compute():
            report = evaluate(
                method.name,
                self.features(method.text, method.network),
                self.semantic(method.text, method.network),
                self.final(method, epsilon),
                self.dataset,
                top_channels=self.cfg.top_channels,
                max_points=self.cfg.silhouette_max_points,
                sample_size=self.cfg.silhouette_sample,
                seed=self.cfg.seed,
            )
            if method.text == "pvdbow":
                report.extra["k"] = self.kmeans_k()
            if method.temporal:
                report.extra["epsilon_seconds"] = self.cfg.epsilon_seconds if epsilon is None else epsilon
            return report

        eps = self.cfg.epsilon_seconds if epsilon is None else epsilon
        return self._get(("report", method, eps if method.temporal else None), compute)


# -- single run ---------------------------------------------------------------------


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dataset_fingerprint(ds: Dataset) -> str:
    h = hashlib.sha256()
    for p in ds.posts:
        h.update(repr((p.post_id, p.user_id, p.platform, p.published_time, p.text, p.action_type,
                       p.video_id)).encode("utf-8"))
    for v in sorted(ds.videos):
        h.update(repr(dataclasses.astuple(ds.videos[v])).encode("utf-8"))
    for c in sorted(ds.channels):
        h.update(repr(dataclasses.astuple(ds.channels[c])).encode("utf-8"))
    return h.hexdigest()


def run_pipeline(cfg: PipelineConfig, ds: Optional[Dataset] = None, use_cache: bool = True) -> dict:
    """Run the configured method end to end and persist every stage.

    Returns the manifest, also written to ``manifest.json``. Wall-clock timings
    go to ``timings.json`` so the manifest stays byte-stable across reruns.
    """
    from .reporting import write_run_outputs

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ws = Workspace(cfg, ds, cache_dir=out / "cache" if use_cache else None)
    method = cfg.method
    stages: list[dict] = []
    timings: dict[str, float] = {}

    def stage(name, fn):
        t0 = time.perf_counter()
        try:
            paths = fn()
        except Exception as exc:
            _write_manifest(out, cfg, stages, method, failed=name)
            raise StageError(name, exc) from exc
        timings[name] = round(time.perf_counter() - t0, 6)
        stages.append({"stage": name, "artifacts": [_artifact(out, p) for p in paths]})

    def text_stage():
        path = out / "text_embeddings.txt"
        ws.text_embedding(method.text).save(path)
        return [path]

    def network_stage():
        walks_path, emb_path = out / "walks.txt", out / "network_embeddings.txt"
        ws.walks(method.network).save(walks_path)
        ws.network_embedding(method.network).save(emb_path)
        return [walks_path, emb_path]

    def align_stage():
        path = out / "embeddings.txt"
        ws.features(method.text, method.network).save(path)
        return [path]

    def semantic_stage():
        path = out / "semantic_assignment.csv"
        ws.semantic(method.text, method.network).save(path)
        return [path]

    def temporal_stage():
        path = out / "temporal_assignment.csv"
        ws.final(method).save(path)
        return [path]

    def topics_stage():
        path = out / "topics.json"
        model = ws.topics(method)
        if model is None:
            path.write_text('{"topics": {}}\n', encoding="utf-8")
        else:
            model.save(path)
        return [path]

    def evaluation_stage():
        return write_run_outputs(ws.report(method), out, figures=cfg.figures)

    stage("text_embedding", text_stage)
    if method.network != "none":
        stage("network_embedding", network_stage)
    stage("align", align_stage)
    stage("semantic_clustering", semantic_stage)
    if method.temporal:
        stage("temporal_clustering", temporal_stage)
    stage("topics", topics_stage)
    stage("evaluation", evaluation_stage)

    manifest = _write_manifest(out, cfg, stages, method)
    with open(out / "timings.json", "w", encoding="utf-8") as fh:
        json.dump(timings, fh, indent=2)
    return manifest


def _artifact(out: Path, path: Path) -> dict:
    return {"path": str(Path(path).relative_to(out)), "sha256": file_sha256(path)}


def _write_manifest(out: Path, cfg: PipelineConfig, stages: list, method: MethodConfig,
                    failed: Optional[str] = None) -> dict:
    manifest = {
        "method": method.name,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "threads": cfg.threads,
        "config": cfg.to_dict(),
        "stages": stages,
    }
    if failed:
        manifest["failed_stage"] = failed
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
