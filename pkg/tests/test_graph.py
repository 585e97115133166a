import math
from collections import Counter

import numpy as np
import pytest
from scipy.stats import chisquare

from coordwatch.datamodel import ChannelRecord, Dataset
from coordwatch.graph import (
    DEFAULT_METAPATHS,
    InvalidMetaPath,
    MetaPathSet,
    NoAdmissibleStart,
    WalkConfig,
    WalkCorpus,
    build_graph,
    metapath_walks,
    node2vec_walks,
    type_sequence,
)
from coordwatch.synth import CampaignSpec, generate

from .conftest import make_dataset


def path_graph():
    # user a - post b - video c
    return build_graph(make_dataset([("b", "a", 0, "x", "c")], [("c", "ch")], [("ch", None)]))


def walk_prefix_ok(types, path):
    cyclic = path[0] == path[-1]
    period = len(path) - 1 if cyclic else len(path)
    if not cyclic and len(types) > len(path):
        return False
    return all(t == path[i % period] for i, t in enumerate(types))


def test_seven_node_fixture(seven_node_ds):
    g = build_graph(seven_node_ds)
    assert g.n_nodes == 7
    assert g.edges() == {
        ("user:A", "post:p1"), ("user:A", "post:p2"), ("user:B", "post:p3"),
        ("post:p1", "video:V"), ("post:p2", "video:V"), ("post:p3", "video:V"), ("video:V", "channel:C"),
    }
    assert g.count_by_type() == {"user": 2, "post": 3, "video": 1, "channel": 1}


def test_empty_graph():
    g = build_graph(Dataset([], {}, {}))
    assert g.n_nodes == 0 and g.n_edges == 0
    with pytest.raises(ValueError):
        node2vec_walks(g, WalkConfig())


def test_post_without_video_has_single_edge():
    g = build_graph(make_dataset([("p", "u", 0, "x", None)]))
    assert [g.names[i] for i in g.neighbors(g.index("post:p"))] == ["user:u"]


def test_graph_invariants_on_synthetic():
    ds, _ = generate(CampaignSpec(n_campaigns=3, background_posts=200, seed=3))
    g = build_graph(ds)
    allowed = {("user", "post"), ("post", "video"), ("video", "channel")}
    for a, b in g.edges():
        ta, tb = a.split(":")[0], b.split(":")[0]
        assert (ta, tb) in allowed or (tb, ta) in allowed
    for pid in g.nodes_of_type("post"):
        kinds = Counter(g.type_of(int(v)) for v in g.neighbors(pid))
        assert kinds["user"] == 1 and kinds["video"] <= 1


def test_transition_weights_for_paper_pq():
    cfg = WalkConfig(p=0.25, q=4.0)
    assert (1 / cfg.p, 1.0, 1 / cfg.q) == (4.0, 1.0, 0.25)


def test_node2vec_return_frequency_on_path():
    g = path_graph()
    corpus = node2vec_walks(g, WalkConfig(walks_per_node=10_000, walk_length=3, p=0.25, q=4.0, seed=11))
    a = g.index("user:a")
    third = [w[2] for w in corpus if w[0] == a]
    assert len(third) == 10_000
    returned = sum(1 for v in third if v == a)
    p = 16 / 17
    sigma = math.sqrt(10_000 * p * (1 - p))
    assert abs(returned - 10_000 * p) <= 3 * sigma


def test_node2vec_p_q_one_is_uniform_walk():
    # star-ish fixture: one user with four posts, every post on a different video of one channel
    posts = [(f"p{i}", "u", i, "x", f"v{i}") for i in range(4)]
    ds = make_dataset(posts, [(f"v{i}", "ch") for i in range(4)], [("ch", None)])
    g = build_graph(ds)
    corpus = node2vec_walks(g, WalkConfig(walks_per_node=10_000, walk_length=3, p=1.0, q=1.0, seed=5))
    p0 = g.index("post:p0")
    nxt = Counter(int(w[2]) for w in corpus if w[0] == g.index("user:u") and w[1] == p0)
    # from p0 (arrived from u): neighbors u and v0, uniform
    observed = [nxt[g.index("user:u")], nxt[g.index("video:v0")]]
    assert sum(observed) > 1000
    assert chisquare(observed).pvalue > 0.001
    # from u (first step): four posts uniform
    first = Counter(int(w[1]) for w in corpus if w[0] == g.index("user:u"))
    assert chisquare(list(first.values())).pvalue > 0.001


def test_walks_follow_edges_and_count(seven_node_ds):
    g = build_graph(seven_node_ds)
    corpus = node2vec_walks(g, WalkConfig(walks_per_node=3, walk_length=10, seed=1))
    assert len(corpus) == 3 * g.n_nodes
    for w in corpus:
        for a, b in zip(w, w[1:]):
            assert g.has_edge(int(a), int(b))


def test_single_node_graph_length_one_walks():
    g = build_graph(Dataset([], {}, {"c": ChannelRecord("c", "c", None)}))
    corpus = node2vec_walks(g, WalkConfig(walks_per_node=4, walk_length=5))
    assert corpus.as_names() == [["channel:c"]] * 4


def test_walks_deterministic_and_thread_independent():
    ds, _ = generate(CampaignSpec(n_campaigns=2, background_posts=150, seed=2))
    g = build_graph(ds)
    cfg = WalkConfig(walks_per_node=2, walk_length=12, seed=9)
    one = node2vec_walks(g, cfg, threads=1)
    two = node2vec_walks(g, cfg, threads=1)
    many = node2vec_walks(g, cfg, threads=4)
    assert np.array_equal(one.tokens, two.tokens) and np.array_equal(one.tokens, many.tokens)
    m1 = metapath_walks(g, MetaPathSet(), cfg, threads=1)
    m4 = metapath_walks(g, MetaPathSet(), cfg, threads=4)
    assert np.array_equal(m1.tokens, m4.tokens)


def test_metapath_post_user_post(seven_node_ds):
    g = build_graph(seven_node_ds)
    corpus = metapath_walks(g, MetaPathSet((("post", "user", "post"),)), WalkConfig(walks_per_node=50, walk_length=5))
    for names in corpus.as_names():
        assert [n.split(":")[0] for n in names] == ["post", "user", "post", "user", "post"]
        if names[0] == "post:p1":
            assert names[1] == "user:A" and names[2] in ("post:p1", "post:p2")


def test_metapath_single_channel_oscillates(seven_node_ds):
    g = build_graph(seven_node_ds)
    corpus = metapath_walks(g, MetaPathSet((("channel", "video", "channel"),)), WalkConfig(2, 5))
    assert corpus.as_names()[0] == ["channel:C", "video:V", "channel:C", "video:V", "channel:C"]


def test_metapath_disconnected_channels_stay_apart():
    ds = make_dataset([], [("v1", "c1"), ("v2", "c2")], [("c1", None), ("c2", None)])
    g = build_graph(ds)
    corpus = metapath_walks(g, MetaPathSet((("channel", "video", "channel"),)),
                            WalkConfig(walks_per_node=1000, walk_length=9, seed=4))
    walks_from_c1 = [w for w in corpus.as_names() if w[0] == "channel:c1"]
    assert len(walks_from_c1) == 1000
    assert all("channel:c2" not in w for w in walks_from_c1)


def test_metapath_zero_type_violations_over_100k_steps():
    ds, _ = generate(CampaignSpec(n_campaigns=4, background_posts=600, seed=1))
    g = build_graph(ds)
    corpus = metapath_walks(g, MetaPathSet(), WalkConfig(walks_per_node=3, walk_length=40, seed=2))
    steps = corpus.n_tokens - len(corpus)
    assert steps >= 100_000
    violations = 0
    for w in corpus:
        types = type_sequence(g, w)
        if not any(walk_prefix_ok(types, p) for p in DEFAULT_METAPATHS):
            violations += 1
        for a, b in zip(w, w[1:]):
            assert g.has_edge(int(a), int(b))
    assert violations == 0


def test_metapath_dead_end_truncates():
    # post without a video: [post, video, channel] cannot leave the post
    ds = make_dataset([("p", "u", 0, "x", None)], [("v", "c")], [("c", None)])
    g = build_graph(ds)
    corpus = metapath_walks(g, MetaPathSet((("post", "video", "channel"),)), WalkConfig(1, 10))
    assert corpus.as_names() == [["post:p"]]


def test_metapath_missing_start_type():
    ds = make_dataset([("p", "u", 0, "x", None)])
    with pytest.raises(NoAdmissibleStart):
        metapath_walks(build_graph(ds), MetaPathSet((("channel", "video", "channel"),)), WalkConfig(1, 4))


@pytest.mark.parametrize("path", [("user", "video"), ("user",), ("post", "tweet")])
def test_invalid_metapaths(path):
    with pytest.raises(InvalidMetaPath):
        MetaPathSet((path,))


@pytest.mark.parametrize("kw", [{"p": 0}, {"q": -1}, {"walk_length": 1}, {"walks_per_node": 0}])
def test_walk_config_validation(kw):
    with pytest.raises(ValueError):
        WalkConfig(**kw)


def test_corpus_round_trip(tmp_path, seven_node_ds):
    g = build_graph(seven_node_ds)
    corpus = node2vec_walks(g, WalkConfig(2, 6, seed=3))
    corpus.save(tmp_path / "walks.txt")
    again = WalkCorpus.load(tmp_path / "walks.txt")
    assert again.as_names() == corpus.as_names()
    assert again.header == corpus.header
    assert (tmp_path / "walks.txt").read_text().startswith("# node2vec")
