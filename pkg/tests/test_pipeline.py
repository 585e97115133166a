import dataclasses
import json

import numpy as np
import pytest

from coordwatch.cluster import ClusterAssignment, refines
from coordwatch.embed import EmbeddingMatrix, SgnsConfig, train_sgns
from coordwatch.graph import WalkCorpus
from coordwatch.pipeline import MethodConfig, PipelineConfig, StageError, Workspace, run_pipeline, table2_grid
from coordwatch.synth import CampaignSpec, generate, write_synthetic
from coordwatch.topics import TopicModel

FAST = dict(text_dim=16, text_epochs=2, node_dim=16, node_epochs=1, walks_per_node=2, walk_length=10, align_dim=8,
            figures=False)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    write_synthetic(*generate(CampaignSpec(n_campaigns=4, posts_per_campaign=(6, 8), background_posts=150,
                                           n_users=120, n_videos=50, n_channels=15, seed=5)), d)
    return d


def cfg_for(data_dir, out, **kw):
    return PipelineConfig(data_dir=str(data_dir), output_dir=str(out), **{**FAST, **kw})


def test_method_names_round_trip():
    for m in table2_grid():
        assert MethodConfig.parse(m.name) == m
    assert MethodConfig.parse("BERTopic+PostTime+N2V") == MethodConfig("external", "n2v", True)
    with pytest.raises(ValueError):
        MethodConfig.parse("Word2Vec")


def test_bertopic_posttime_n2v_has_seven_stages(data_dir, tmp_path):
    cfg = cfg_for(data_dir, tmp_path / "out", text="external", network="n2v", temporal=True)
    manifest = run_pipeline(cfg)
    assert manifest["method"] == "BERTopic+PostTime+N2V"
    assert [s["stage"] for s in manifest["stages"]] == [
        "text_embedding", "network_embedding", "align", "semantic_clustering", "temporal_clustering", "topics",
        "evaluation"]
    on_disk = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert on_disk == manifest
    assert set(json.loads((tmp_path / "out" / "timings.json").read_text())) == {s["stage"] for s in manifest["stages"]}


def test_rerun_is_byte_identical(data_dir, tmp_path):
    out = tmp_path / "out"
    first = run_pipeline(cfg_for(data_dir, out), use_cache=False)
    blobs = {a["path"]: (out / a["path"]).read_bytes() for s in first["stages"] for a in s["artifacts"]}
    manifest_bytes = (out / "manifest.json").read_bytes()
    second = run_pipeline(cfg_for(data_dir, out), use_cache=False)
    assert second == first
    assert (out / "manifest.json").read_bytes() == manifest_bytes
    for path, blob in blobs.items():
        assert (out / path).read_bytes() == blob, path


def test_cached_rerun_matches(data_dir, tmp_path):
    out = tmp_path / "out"
    first = run_pipeline(cfg_for(data_dir, out))
    assert (out / "cache").is_dir()
    assert run_pipeline(cfg_for(data_dir, out)) == first


def test_persisted_stages_reload_equal(data_dir, tmp_path):
    out = tmp_path / "out"
    cfg = cfg_for(data_dir, out, network="mp2v")
    run_pipeline(cfg, use_cache=False)
    ws = Workspace(cfg)
    m = cfg.method
    for name, value in (("text_embeddings.txt", ws.text_embedding(m.text)),
                        ("network_embeddings.txt", ws.network_embedding(m.network)),
                        ("embeddings.txt", ws.features(m.text, m.network))):
        back = EmbeddingMatrix.load(out / name)
        assert back.row_ids == value.row_ids and np.array_equal(back.values, value.values), name
    assert ClusterAssignment.load(out / "semantic_assignment.csv") == ws.semantic(m.text, m.network)
    assert ClusterAssignment.load(out / "temporal_assignment.csv") == ws.final(m)
    walks = (out / "walks.txt").read_text().splitlines()[1:]
    assert walks == [" ".join(w) for w in ws.walks("mp2v").as_names()]
    topics = TopicModel.load(out / "topics.json")
    assert topics.topics == ws.topics(m).topics


def test_refinement_holds_for_every_temporal_row(data_dir):
    ws = Workspace(cfg_for(data_dir, "unused"))
    for m in table2_grid():
        if m.temporal:
            assert refines(ws.temporal(m), ws.semantic(m.text, m.network)), m.name


def test_config_hash_changes_iff_field_changes():
    base = PipelineConfig()
    assert PipelineConfig().hash() == base.hash()
    for f in dataclasses.fields(PipelineConfig):
        value = getattr(base, f.name)
        if isinstance(value, bool):
            changed = not value
        elif isinstance(value, (int, float)):
            changed = value + 1
        else:
            changed = value + "x"
        assert dataclasses.replace(base, **{f.name: changed}).hash() != base.hash(), f.name


def test_config_file_round_trip(tmp_path):
    cfg = PipelineConfig(text="external", network="mp2v", temporal=False, seed=7, epsilon_seconds=30.5)
    path = tmp_path / "c.ini"
    path.write_text(cfg.dumps())
    assert PipelineConfig.load(path) == cfg
    bare = tmp_path / "bare.ini"
    bare.write_text("seed = 3\nnetwork = none\n")
    assert PipelineConfig.load(bare) == PipelineConfig(seed=3, network="none")
    bad = tmp_path / "bad.ini"
    bad.write_text("colour = blue\n")
    with pytest.raises(ValueError):
        PipelineConfig.load(bad)


def test_stage_failure_names_stage_and_keeps_partial(data_dir, tmp_path):
    out = tmp_path / "out"
    cfg = cfg_for(data_dir, out, text="external", vectors=str(tmp_path / "missing.txt"))
    with pytest.raises(StageError) as info:
        run_pipeline(cfg)
    assert info.value.stage == "text_embedding"
    assert json.loads((out / "manifest.json").read_text())["failed_stage"] == "text_embedding"


def test_walk_corpus_from_disk_trains_identically(data_dir, tmp_path):
    ws = Workspace(cfg_for(data_dir, tmp_path))
    corpus = ws.walks("n2v")
    corpus.save(tmp_path / "w.txt")
    back = WalkCorpus.load(tmp_path / "w.txt")
    assert back.as_names() == corpus.as_names()
    cfg = SgnsConfig(dim=8, epochs=1, seed=2)
    a, b = train_sgns(corpus, cfg).word_matrix(), train_sgns(back, cfg).word_matrix()
    assert a.row_ids == b.row_ids and np.array_equal(a.values, b.values)
