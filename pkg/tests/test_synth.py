import filecmp
import itertools
import random

import numpy as np
import pytest

from coordwatch.cluster import NOISE, ClusterAssignment
from coordwatch.datamodel import IngestConfig, ingest
from coordwatch.pipeline import MethodConfig, PipelineConfig, Workspace
from coordwatch.synth import (
    CampaignSpec,
    GroundTruth,
    bundled_fixture,
    generate,
    hashed_sentence_vectors,
    score_detection,
    write_synthetic,
)

SMALL = dict(background_posts=200, n_users=150, n_videos=60, n_channels=20)


def test_zero_campaigns_is_pure_background():
    ds, gt = generate(CampaignSpec(n_campaigns=0, **SMALL))
    assert len(ds.posts) == 200
    assert all(c is None for c in gt.campaign_of.values())


def test_campaign_structure():
    spec = CampaignSpec(n_campaigns=5, posts_per_campaign=(10, 10), burst_width_seconds=40,
                        text_mutation_rate=0.1, seed=4, **SMALL)
    ds, gt = generate(spec)
    campaigns = gt.campaigns()
    assert sorted(campaigns) == list(range(5))
    for members in campaigns.values():
        assert len(members) == 10
        posts = [ds.post(pid) for pid in members]
        times = [p.published_time for p in posts]
        assert max(times) - min(times) <= 40
        scores = {ds.factuality_of(p) for p in posts}
        assert len(scores) == 1 and None not in scores


def test_fixed_seed_identical_files(tmp_path):
    spec = CampaignSpec(n_campaigns=3, seed=9, **SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    pa = write_synthetic(*generate(spec), a)
    pb = write_synthetic(*generate(spec), b)
    for key in pa:
        assert filecmp.cmp(pa[key], pb[key], shallow=False), key
    pc = write_synthetic(*generate(CampaignSpec(n_campaigns=3, seed=10, **SMALL)), tmp_path / "c")
    assert not filecmp.cmp(pa["posts"], pc["posts"], shallow=False)


def test_ingest_round_trip(tmp_path):
    ds, gt = generate(CampaignSpec(n_campaigns=3, seed=2, **SMALL))
    paths = write_synthetic(ds, gt, tmp_path)
    back = ingest(paths["posts"], paths["videos"], paths["channels"], IngestConfig(strict=True))
    assert back.posts == ds.posts
    assert back.videos == ds.videos
    assert back.channels == ds.channels
    assert GroundTruth.load(paths["ground_truth"]).campaign_of == gt.campaign_of


def test_hashed_vectors_shape_and_duplicates():
    ds, _ = generate(CampaignSpec(n_campaigns=1, seed=1, **SMALL))
    m = hashed_sentence_vectors(ds, 384)
    assert m.dim == 384 and m.row_ids == tuple(ds.post_ids)
    assert np.array_equal(m.values, np.round(m.values))


def test_spec_validation():
    for bad in (dict(burst_width_seconds=0), dict(text_mutation_rate=1.5), dict(posts_per_campaign=(5, 2)),
                dict(platform_mix={"twitter": 0.5}), dict(campaign_purity=-0.1)):
        with pytest.raises(ValueError):
            CampaignSpec(**bad)


def test_bundled_fixture_shape():
    d = bundled_fixture()
    for name in ("posts.jsonl", "videos.jsonl", "channels.csv", "ground_truth.csv", "sentence_vectors.txt.gz"):
        assert (d / name).exists()
    ds = ingest(d / "posts.jsonl", d / "videos.jsonl", d / "channels.csv")
    assert len(ds.posts) == 2000


# -- scoring ----------------------------------------------------------------------


def truth(mapping):
    return GroundTruth(dict(mapping))


def test_perfect_recovery():
    gt = truth({"a": 0, "b": 0, "c": 1, "d": 1, "e": None})
    a = ClusterAssignment(("a", "b", "c", "d", "e"), np.array([0, 0, 1, 1, NOISE]))
    s = score_detection(a, gt)
    assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)


def test_everything_noise():
    gt = truth({"a": 0, "b": 0})
    s = score_detection(ClusterAssignment(("a", "b"), np.array([NOISE, NOISE])), gt)
    assert s.recall == 0.0 and s.precision == 0.0
    assert s.precision_undefined and not s.recall_undefined


def brute_pairs(ids, labels, gt):
    tp = pred = true = 0
    for (i, li), (j, lj) in itertools.combinations(zip(ids, labels), 2):
        same_cluster = li >= 0 and li == lj
        ci, cj = gt.campaign_of[i], gt.campaign_of[j]
        same_campaign = ci is not None and ci == cj
        pred += same_cluster
        true += same_campaign
        tp += same_cluster and same_campaign
    return tp, pred, true


@pytest.mark.parametrize("seed", range(5))
def test_random_assignment_matches_pair_enumeration(seed):
    rnd = random.Random(seed)
    ids = [f"p{i}" for i in range(60)]
    gt = truth({pid: (i % 6 if i < 30 else None) for i, pid in enumerate(ids)})
    labels = [rnd.randrange(-1, 8) for _ in ids]
    s = score_detection(ClusterAssignment(tuple(ids), np.array(labels)), gt)
    tp, pred, true = brute_pairs(ids, labels, gt)
    assert (s.true_positive_pairs, s.predicted_pairs, s.true_pairs) == (tp, pred, true)
    assert s.precision == pytest.approx(tp / pred)
    # random labels: precision sits near the base rate of same-campaign pairs
    base_rate = true / (len(ids) * (len(ids) - 1) / 2)
    assert abs(s.precision - base_rate) < 0.15


def test_recall_non_increasing_as_bursts_widen():
    method = MethodConfig.parse("Doc2Vec+PostTime")
    cfg = PipelineConfig(text_dim=32, text_epochs=5, network="none")
    for seed in range(3):
        recalls = []
        for width in (60, 120, 300, 900):
            ds, gt = generate(CampaignSpec(n_campaigns=6, posts_per_campaign=(8, 12), burst_width_seconds=width,
                                           background_posts=300, n_users=200, n_videos=80, n_channels=20, seed=seed))
            recalls.append(score_detection(Workspace(cfg, ds).final(method), gt).recall)
        assert all(b <= a for a, b in zip(recalls, recalls[1:])), (seed, recalls)
        assert recalls[-1] < recalls[0]
