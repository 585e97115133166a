"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .ablation import epsilon_sweep, parse_epsilons, run_ablation, sweep_argmin, write_ablation, \
    write_epsilon_sweep
from .cluster import ClusterAssignment, KTooLarge, drop_singletons, hdbscan_simplified, kmeans, temporal_subdivide
from .datamodel import DanglingReference, InsufficientLabels, MalformedRecord, dataset_factuality_std, \
    join_factuality, save_dataset
from .embed import DegenerateVocabulary, EmbeddingMatrix, MalformedVectors, MissingRows, RowMismatch
from .evaluate import evaluate
from .graph import InvalidMetaPath, NoAdmissibleStart
from .pipeline import MethodConfig, PipelineConfig, StageError, Workspace, run_pipeline
from .reporting import write_run_outputs
from .synth import CampaignSpec, GroundTruth, generate, score_detection, write_synthetic
from .topics import EmptyVocabulary

OUTPUT_ENV = "COORDWATCH_OUTPUT_DIR"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

DATA_ERRORS = (MalformedRecord, DanglingReference, InsufficientLabels, DegenerateVocabulary, MalformedVectors,
               MissingRows, RowMismatch, NoAdmissibleStart, EmptyVocabulary, KTooLarge, OSError)
USAGE_ERRORS = (InvalidMetaPath, configparser.Error)

log = logging.getLogger("coordwatch")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="key = value config file")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    g.add_argument("--output-dir", "-o", help=f"output directory (default: ${OUTPUT_ENV} or the config)")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int)
    g.add_argument("--no-cache", action="store_true", help="recompute embeddings instead of reusing cached ones")
    g.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    g.add_argument("-v", "--verbose", action="store_true")
    d = p.add_argument_group("input data")
    d.add_argument("--data", help="directory holding posts.jsonl, videos.jsonl, channels.csv")
    d.add_argument("--posts")
    d.add_argument("--videos")
    d.add_argument("--channels")
    d.add_argument("--vectors", help="external sentence vectors for the BERTopic route")
    d.add_argument("--strict", action="store_true", help="fail on malformed or dangling records")


def _method_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", help='Table 2 row name, e.g. "BERTopic+PostTime+N2V"')


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coordwatch", description="Coordinated-campaign detection over multi-platform posts.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate and normalize input files")
    _common(p)

    p = sub.add_parser("graph", help="build the interaction graph and write random walks")
    _common(p)
    p.add_argument("--walker", choices=["n2v", "mp2v"], help="default: the configured network route, else n2v")

    p = sub.add_parser("embed", help="text, network and aligned embeddings")
    _common(p)
    _method_args(p)

    p = sub.add_parser("clusterize", help="semantic clustering, temporal split, singleton dropping")
    _common(p)
    _method_args(p)
    p.add_argument("--embeddings", help="cluster this embedding file instead of the configured features")
    p.add_argument("--eps", type=float, help="temporal epsilon in seconds")

    p = sub.add_parser("topics", help="c-TF-IDF topic words re-ranked by MMR")
    _common(p)
    _method_args(p)
    p.add_argument("--assignment", help="cluster assignment CSV (default: computed from the config)")

    p = sub.add_parser("evaluate", help="silhouette, factuality dispersion, distributions, channel table")
    _common(p)
    _method_args(p)
    p.add_argument("--assignment", help="final cluster assignment CSV")
    p.add_argument("--embeddings", help="embedding file used for the silhouette")

    p = sub.add_parser("ablate", help="evaluate ablation rows into table2.csv")
    _common(p)
    p.add_argument("--rows", default="all", help='"all" or comma-separated Table 2 row names')

    p = sub.add_parser("sweep", help="temporal epsilon sweep into epsilon_sweep.csv")
    _common(p)
    _method_args(p)
    p.add_argument("--eps", default="10..120", help='"lo..hi[:step]" or comma list (default 10..120)')

    p = sub.add_parser("synth", help="generate a synthetic collection with planted campaigns")
    p.add_argument("--out", "-o", help=f"output directory (default: ${OUTPUT_ENV} or ./synthetic)")
    p.add_argument("--campaigns", type=int, default=CampaignSpec.n_campaigns)
    p.add_argument("--campaign-size", default="8,15", help="min,max posts per campaign")
    p.add_argument("--burst", type=float, default=CampaignSpec.burst_width_seconds)
    p.add_argument("--mutation", type=float, default=CampaignSpec.text_mutation_rate)
    p.add_argument("--purity", type=float, default=CampaignSpec.campaign_purity)
    p.add_argument("--background", type=int, default=CampaignSpec.background_posts)
    p.add_argument("--reuse-users", action="store_true", help="let campaigns share accounts")
    p.add_argument("--vectors-dim", type=int, default=384, help="stand-in sentence vector width (0 = none)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("run", help="run the configured pipeline end to end")
    _common(p)
    _method_args(p)

    p = sub.add_parser("score", help="pairwise precision/recall against planted ground truth")
    p.add_argument("--assignment", required=True)
    p.add_argument("--truth", required=True, help="ground_truth.csv from synth")
    p.add_argument("--out", help="also write the score as JSON here")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


# -- config resolution -----------------------------------------------------------------


def resolve_config(args) -> PipelineConfig:
    try:
        cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {exc.filename}") from exc
    except (ValueError, configparser.Error) as exc:
        raise UsageError(f"bad config: {exc}") from exc
    overrides = {}
    env_out = os.environ.get(OUTPUT_ENV)
    if env_out and not (args.config and "output_dir" in _keys_in(args.config)):
        overrides["output_dir"] = env_out
    for key in ("data", "posts", "videos", "channels", "vectors"):
        value = getattr(args, key, None)
        if value:
            overrides["data_dir" if key == "data" else key] = value
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.strict:
        overrides["strict"] = True
    method = getattr(args, "method", None)
    if method:
        try:
            m = MethodConfig.parse(method)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        overrides.update(text=m.text, network=m.network, temporal=m.temporal)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    try:
        merged = {**cfg.to_dict(), **overrides}
        cfg = PipelineConfig.from_mapping(merged)
        cfg.method  # validates text / network names
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad config: {exc}") from exc
    return cfg


def _keys_in(path) -> set[str]:
    text = Path(path).read_text(encoding="utf-8")
    return {line.split("=", 1)[0].strip().replace("-", "_") for line in text.splitlines() if "=" in line}


def _workspace(cfg: PipelineConfig, args) -> Workspace:
    cache = None if args.no_cache else Path(cfg.output_dir) / "cache"
    return Workspace(cfg, cache_dir=cache)


def _out(cfg: PipelineConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


# -- subcommands -----------------------------------------------------------------------


def cmd_ingest(cfg: PipelineConfig, args) -> int:
    ws = _workspace(cfg, args)
    ds = ws.dataset
    out = _out(cfg)
    save_dataset(ds, out)
    stats = join_factuality(ds)
    try:
        std = dataset_factuality_std(ds)
    except InsufficientLabels:
        std = None
    summary = {
        "posts": len(ds.posts),
        "videos": len(ds.videos),
        "channels": len(ds.channels),
        "platforms": dict(sorted(ds.platform_counts().items())),
        "quarantined": dict(sorted(ds.quarantined.items())),
        "labeled_posts": stats.n_labeled,
        "fraction_labeled": stats.fraction_labeled,
        "score_counts": {str(k): v for k, v in sorted(stats.counts.items())},
        "dataset_factuality_std": std,
    }
    with open(out / "ingest_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _emit(summary)
    return EXIT_OK


def cmd_graph(cfg: PipelineConfig, args) -> int:
    ws = _workspace(cfg, args)
    walker = args.walker or (cfg.network if cfg.network != "none" else "n2v")
    g = ws.graph()
    corpus = ws.walks(walker)
    out = _out(cfg)
    corpus.save(out / "walks.txt")
    summary = {"nodes": g.n_nodes, "edges": g.n_edges, "nodes_by_type": g.count_by_type(), "walker": walker,
               "walks": len(corpus), "tokens": corpus.n_tokens}
    _emit(summary)
    return EXIT_OK


def cmd_embed(cfg: PipelineConfig, args) -> int:
    ws = _workspace(cfg, args)
    m = cfg.method
    out = _out(cfg)
    ws.text_embedding(m.text).save(out / "text_embeddings.txt")
    written = ["text_embeddings.txt"]
    if m.network != "none":
        ws.network_embedding(m.network).save(out / "network_embeddings.txt")
        written.append("network_embeddings.txt")
    ws.features(m.text, m.network).save(out / "embeddings.txt")
    written.append("embeddings.txt")
    _emit({"method": m.name, "written": written, "rows": len(ws.dataset)})
    return EXIT_OK


def _external_final(cfg: PipelineConfig, ws: Workspace, feats: EmbeddingMatrix, eps: Optional[float]):
    m = cfg.method
    feats = feats.take(ws.dataset.post_ids)
    if m.text == "pvdbow":
        semantic = kmeans(feats, ws.kmeans_k(), cfg.seed)
    else:
        semantic = hdbscan_simplified(feats, cfg.hdbscan_min_cluster_size, cfg.hdbscan_min_samples)
    before = temporal_subdivide(semantic, ws.dataset, cfg.temporal_params(eps)) if m.temporal else semantic
    final = drop_singletons(before)
    final.meta["clusters_before_drop"] = before.n_clusters
    return semantic, final


def cmd_clusterize(cfg: PipelineConfig, args) -> int:
    ws = _workspace(cfg, args)
    m = cfg.method
    if args.embeddings:
        semantic, final = _external_final(cfg, ws, EmbeddingMatrix.load(args.embeddings), args.eps)
    else:
        semantic, final = ws.semantic(m.text, m.network), ws.final(m, args.eps)
    out = _out(cfg)
    semantic.save(out / "semantic_assignment.csv")
    final.save(out / "final_assignment.csv")
    _emit({"method": m.name, "semantic_clusters": semantic.n_clusters,
           "clusters_before_drop": final.meta.get("clusters_before_drop"), "clusters_kept": final.n_clusters,
           "posts_kept": int((final.labels >= 0).sum())})
    return EXIT_OK


def cmd_topics(cfg: PipelineConfig, args) -> int:
    from .topics import ctfidf, mmr_rerank

    ws = _workspace(cfg, args)
    out = _out(cfg)
    if args.assignment:
        a = ClusterAssignment.load(args.assignment)
        model = ctfidf(a, ws.dataset, top_n=3 * cfg.top_n_terms)
        words = ws.word_vectors()
        for label, terms in model.topics.items():
            model.topics[label] = mmr_rerank(terms, words, cfg.mmr_lambda, cfg.top_n_terms)
    else:
        model = ws.topics(cfg.method)
        if model is None:
            raise EmptyVocabulary("no clusters survived; nothing to describe")
    model.save(out / "topics.json")
    _emit({"clusters": len(model.topics), "written": "topics.json"})
    return EXIT_OK


def cmd_evaluate(cfg: PipelineConfig, args) -> int:
    ws = _workspace(cfg, args)
    m = cfg.method
    feats = EmbeddingMatrix.load(args.embeddings) if args.embeddings else ws.features(m.text, m.network)
    if args.assignment:
        final = ClusterAssignment.load(args.assignment)
        semantic = final
    else:
        final, semantic = ws.final(m), ws.semantic(m.text, m.network)
    report = evaluate(m.name, feats, semantic, final, ws.dataset, top_channels=cfg.top_channels,
                      max_points=cfg.silhouette_max_points, sample_size=cfg.silhouette_sample, seed=cfg.seed)
    write_run_outputs(report, _out(cfg), figures=cfg.figures)
    _emit(dict(zip(("method", "silhouette", "avg", "median", "std", "prop0"), report.table2_row())))
    return EXIT_OK


def cmd_ablate(cfg: PipelineConfig, args) -> int:
    if args.rows.strip().lower() == "all":
        rows = None
    else:
        try:
            rows = [MethodConfig.parse(name) for name in args.rows.split(",") if name.strip()]
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    ws = _workspace(cfg, args)
    ws.dataset  # surface data errors before the per-row error isolation
    result = run_ablation(ws, rows)
    write_ablation(result, _out(cfg))
    for r in result.reports:
        print(",".join(r.table2_row()) + (f"  # {r.error}" if r.error else ""))
    if result.baseline_std is not None:
        print(f"dataset factuality std: {result.baseline_std:.4f}")
    return EXIT_OK


def cmd_sweep(cfg: PipelineConfig, args) -> int:
    try:
        epsilons = parse_epsilons(args.eps)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ws = _workspace(cfg, args)
    rows = epsilon_sweep(ws, cfg.method, epsilons)
    write_epsilon_sweep(rows, _out(cfg), figures=cfg.figures)
    for r in rows:
        print(f"{r['epsilon_seconds']:g},{r['fact_avg']:.4f},{r['clusters_kept']}")
    best = sweep_argmin(rows)
    if best is not None:
        print(f"lowest fact_avg at epsilon = {best:g} s")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        lo, hi = (int(v) for v in args.campaign_size.split(","))
        spec = CampaignSpec(n_campaigns=args.campaigns, posts_per_campaign=(lo, hi), burst_width_seconds=args.burst,
                            text_mutation_rate=args.mutation, campaign_purity=args.purity,
                            background_posts=args.background, reuse_campaign_users=args.reuse_users, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "synthetic")
    ds, gt = generate(spec)
    paths = write_synthetic(ds, gt, out, vectors_dim=args.vectors_dim or None)
    _emit({"posts": len(ds.posts), "campaign_posts": sum(c is not None for c in gt.campaign_of.values()),
           "written": sorted(p.name for p in paths.values())})
    return EXIT_OK


def cmd_run(cfg: PipelineConfig, args) -> int:
    manifest = run_pipeline(cfg, use_cache=not args.no_cache)
    print(f"{manifest['method']}: {len(manifest['stages'])} stages written to {cfg.output_dir}")
    with open(Path(cfg.output_dir) / "table2.csv", encoding="utf-8") as fh:
        print(fh.read().rstrip())
    return EXIT_OK


def cmd_score(args) -> int:
    a = ClusterAssignment.load(args.assignment)
    s = score_detection(a, GroundTruth.load(args.truth))
    payload = dataclasses.asdict(s)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(f"precision={s.precision:.4f} recall={s.recall:.4f} F1={s.f1:.4f}")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest, "graph": cmd_graph, "embed": cmd_embed, "clusterize": cmd_clusterize,
    "topics": cmd_topics, "evaluate": cmd_evaluate, "ablate": cmd_ablate, "sweep": cmd_sweep, "run": cmd_run,
}


def _exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, (UsageError,) + USAGE_ERRORS):
        return EXIT_USAGE
    if isinstance(exc, DATA_ERRORS):
        return EXIT_DATA
    return EXIT_INTERNAL


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "score":
            return cmd_score(args)
        cfg = resolve_config(args)
        if args.print_config:
            sys.stdout.write(cfg.dumps())
            return EXIT_OK
        if not (cfg.data_dir or cfg.posts):
            raise UsageError("no input data: pass --data DIR or set data_dir in the config")
        return COMMANDS[args.command](cfg, args)
    except Exception as exc:  # noqa: BLE001 - mapped to documented exit codes
        code = _exit_code_for(exc)
        if code == EXIT_INTERNAL:
            log.exception("internal error")
        print(f"coordwatch: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
