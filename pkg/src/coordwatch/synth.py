"""Synthetic multi-platform collections with planted coordinated campaigns.

A campaign is one text template mutated per post, published inside a short
burst, linking videos from channels that all carry the same factuality score.
Background posts draw independent topics, times and videos. The generator
emits the regular input files plus ``ground_truth.csv`` so pipeline output can
be scored pairwise.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .cluster import ClusterAssignment
from .datamodel import ChannelRecord, Dataset, PostRecord, VideoRecord, save_dataset
from .embed import EmbeddingMatrix, tokenize

# 2018-04-01T00:00:00Z
DEFAULT_START = 1522540800
TABLE1_PLATFORM_MIX = {"twitter": 15314 / 16941, "facebook": 1146 / 16941, "reddit": 481 / 16941}
# share of labeled posts per factuality score; 0 and 1 dominate
DEFAULT_SCORE_WEIGHTS = (0.745, 0.194, 0.02, 0.015, 0.015, 0.011)

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "kl"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]
_CODAS = ["", "n", "s", "r", "l", "k"]


@dataclass(frozen=True)
class CampaignSpec:
    n_campaigns: int = 20
    posts_per_campaign: tuple[int, int] = (8, 15)
    burst_width_seconds: float = 40.0
    text_mutation_rate: float = 0.15
    platform_mix: dict = field(default_factory=lambda: dict(TABLE1_PLATFORM_MIX))
    campaign_score_weights: tuple[float, ...] = DEFAULT_SCORE_WEIGHTS
    campaign_purity: float = 1.0
    video_reuse_prob: float = 0.7
    background_posts: int = 5000
    background_time_span: float = 30 * 86400.0
    n_channels: int = 120
    labeled_channel_fraction: float = 0.5
    n_videos: int = 600
    n_users: int = 2500
    n_topics: int = 30
    vocab_size: int = 2000
    reply_fraction: float = 0.1
    reuse_campaign_users: bool = False
    start_time: int = DEFAULT_START
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.posts_per_campaign
        if not 1 <= lo <= hi:
            raise ValueError("posts_per_campaign must be an increasing positive range")
        if not self.burst_width_seconds > 0:
            raise ValueError("burst_width_seconds must be positive")
        if not 0.0 <= self.text_mutation_rate <= 1.0:
            raise ValueError("text_mutation_rate must lie in [0, 1]")
        if not 0.0 <= self.campaign_purity <= 1.0:
            raise ValueError("campaign_purity must lie in [0, 1]")
        if not 0.0 <= self.video_reuse_prob <= 1.0:
            raise ValueError("video_reuse_prob must lie in [0, 1]")
        if abs(sum(self.platform_mix.values()) - 1.0) > 1e-6:
            raise ValueError("platform_mix must sum to 1")
        if len(self.campaign_score_weights) != 6 or abs(sum(self.campaign_score_weights) - 1.0) > 1e-6:
            raise ValueError("campaign_score_weights must be 6 weights summing to 1")
        if self.background_time_span <= 2 * self.burst_width_seconds:
            raise ValueError("background_time_span too short for the bursts")


@dataclass
class GroundTruth:
    campaign_of: dict[str, Optional[int]]

    def campaigns(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {}
        for pid, c in self.campaign_of.items():
            if c is not None:
                out.setdefault(c, []).append(pid)
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["post_id", "campaign_id"])
            for pid, c in self.campaign_of.items():
                writer.writerow([pid, "" if c is None else c])

    @classmethod
    def load(cls, path) -> "GroundTruth":
        with open(path, encoding="utf-8", newline="") as fh:
            return cls({r["post_id"]: (int(r["campaign_id"]) if r["campaign_id"] else None) for r in csv.DictReader(fh)})


def _vocabulary(size: int, rng: np.random.Generator) -> list[str]:
    words: list[str] = []
    seen = set()
    while len(words) < size:
        n_syl = int(rng.integers(1, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(n_syl))
        w += _CODAS[rng.integers(len(_CODAS))]
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _zipf_weights(n: int, s: float = 1.1) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def generate(spec: CampaignSpec = CampaignSpec()) -> tuple[Dataset, GroundTruth]:
    rng = np.random.default_rng(spec.seed)
    vocab = _vocabulary(spec.vocab_size, rng)
    vocab_arr = np.array(vocab)
    general_p = _zipf_weights(len(vocab))
    topic_words = [rng.choice(len(vocab), size=60, replace=False) for _ in range(spec.n_topics)]
    topic_p = _zipf_weights(60, 0.8)

    def topic_text(topic: int, length: int) -> list[str]:
        own = rng.random(length) < 0.75
        words = np.where(
            own,
            topic_words[topic][rng.choice(60, size=length, p=topic_p)],
            rng.choice(len(vocab), size=length, p=general_p),
        )
        return list(vocab_arr[words])

    # channels and background videos
    channels: dict[str, ChannelRecord] = {}
    scores = np.arange(6)
    for i in range(spec.n_channels):
        labeled = rng.random() < spec.labeled_channel_fraction
        score = int(rng.choice(scores, p=spec.campaign_score_weights)) if labeled else None
        cid = f"ch{i:04d}"
        channels[cid] = ChannelRecord(cid, f"channel {i}", score)
    channel_ids = list(channels)
    channel_p = _zipf_weights(len(channel_ids), 1.0)
    videos: dict[str, VideoRecord] = {}
    for i in range(spec.n_videos):
        vid = f"v{i:05d}"
        cid = channel_ids[int(rng.choice(len(channel_ids), p=channel_p))]
        title = " ".join(topic_text(int(rng.integers(spec.n_topics)), 6))
        videos[vid] = VideoRecord(vid, title, cid, spec.start_time - int(rng.integers(0, 86400 * 30)), None)
    bg_video_ids = list(videos)
    video_p = _zipf_weights(len(bg_video_ids), 0.9)

    platforms = list(spec.platform_mix)
    platform_p = np.array([spec.platform_mix[p] for p in platforms])
    span = spec.background_time_span

    drafts: list[dict] = []
    for _ in range(spec.background_posts):
        topic = int(rng.integers(spec.n_topics))
        vid = bg_video_ids[int(rng.choice(len(bg_video_ids), p=video_p))]
        drafts.append({
            "user": f"u{int(rng.integers(spec.n_users)):05d}",
            "platform": platforms[int(rng.choice(len(platforms), p=platform_p))],
            "time": spec.start_time + int(rng.integers(0, int(span))),
            "tokens": topic_text(topic, int(rng.integers(8, 21))),
            "video": vid,
            "campaign": None,
        })

    campaign_user_pool: list[str] = []
    burst = int(spec.burst_width_seconds)
    for c in range(spec.n_campaigns):
        n_posts = int(rng.integers(spec.posts_per_campaign[0], spec.posts_per_campaign[1] + 1))
        score = int(rng.choice(scores, p=spec.campaign_score_weights))
        pure = [cid for cid in channel_ids if channels[cid].factuality == score]
        n_own = 1 + int(rng.integers(2))
        own_channels = []
        for j in range(n_own):
            if pure and rng.random() < 0.5:
                own_channels.append(pure[int(rng.integers(len(pure)))])
            else:
                cid = f"cc{c:03d}{j}"
                channels[cid] = ChannelRecord(cid, f"campaign channel {c}.{j}", score)
                own_channels.append(cid)
        topic = int(rng.integers(spec.n_topics))
        camp_videos = []
        for j in range(1 + int(rng.integers(1, 3))):
            vid = f"cv{c:03d}{j}"
            videos[vid] = VideoRecord(vid, " ".join(topic_text(topic, 6)), own_channels[j % n_own], None, None)
            camp_videos.append(vid)
        other_score_videos = [v for v in bg_video_ids if channels[videos[v].channel_id].factuality not in (None, score)]
        template = topic_text(topic, int(rng.integers(12, 19)))
        n_accounts = max(2, n_posts // 2)
        if spec.reuse_campaign_users and campaign_user_pool:
            reuse = min(len(campaign_user_pool), n_accounts // 2)
            accounts = list(rng.choice(campaign_user_pool, size=reuse, replace=False))
        else:
            accounts = []
        accounts += [f"cu{c:03d}_{k}" for k in range(n_accounts - len(accounts))]
        campaign_user_pool.extend(a for a in accounts if a not in campaign_user_pool)
        start = spec.start_time + int(rng.integers(3600, int(span) - 3600 - burst))
        offsets = np.sort(rng.integers(0, burst + 1, size=n_posts))
        for k in range(n_posts):
            tokens = []
            for tok in template:
                u = rng.random()
                if u < spec.text_mutation_rate / 2:
                    tokens.append(vocab[int(rng.integers(len(vocab)))])
                elif u < spec.text_mutation_rate:
                    tokens.extend([tok, vocab[int(rng.integers(len(vocab)))]])
                else:
                    tokens.append(tok)
            if rng.random() < spec.video_reuse_prob:
                vid = camp_videos[0]
            else:
                vid = camp_videos[1 + int(rng.integers(len(camp_videos) - 1))]
            if spec.campaign_purity < 1.0 and other_score_videos and rng.random() > spec.campaign_purity:
                vid = other_score_videos[int(rng.integers(len(other_score_videos)))]
            drafts.append({
                "user": accounts[k % len(accounts)],
                "platform": platforms[int(rng.choice(len(platforms), p=platform_p))],
                "time": start + int(offsets[k]),
                "tokens": tokens,
                "video": vid,
                "campaign": c,
            })

    order = sorted(range(len(drafts)), key=lambda i: (drafts[i]["time"], i))
    posts, truth = [], {}
    for n, i in enumerate(order):
        d = drafts[i]
        pid = f"p{n:06d}"
        action = "reply" if rng.random() < spec.reply_fraction else "post"
        text = " ".join(d["tokens"]) + f" https://youtu.be/{d['video']}"
        posts.append(PostRecord(pid, d["user"], d["platform"], d["time"], text, action, d["video"]))
        truth[pid] = d["campaign"]
    return Dataset(posts, videos, channels), GroundTruth(truth)


# -- stand-in sentence vectors ---------------------------------------------------


def _token_slots(token: str, dim: int, n_hashes: int = 3) -> list[tuple[int, int]]:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=4 * n_hashes).digest()
    out = []
    for k in range(n_hashes):
        h = int.from_bytes(digest[4 * k : 4 * k + 4], "little")
        out.append((h % dim, 1 if (h >> 31) & 1 else -1))
    return out


def hashed_sentence_vectors(ds: Dataset, dim: int = 384) -> EmbeddingMatrix:
    """Signed feature-hashing bag of words, one integer vector per post.

    Deterministic and dependency-free; used wherever the pipeline expects
    vectors from an external sentence encoder.
    """
    values = np.zeros((len(ds.posts), dim))
    cache: dict[str, list[tuple[int, int]]] = {}
    for i, post in enumerate(ds.posts):
        for tok in tokenize(post.text):
            slots = cache.get(tok)
            if slots is None:
                slots = cache[tok] = _token_slots(tok, dim)
            for j, sign in slots:
                values[i, j] += sign
    return EmbeddingMatrix(tuple(ds.post_ids), values)


def save_integer_vectors(m: EmbeddingMatrix, path) -> None:
    """Write the text vectors format, gzipped with a fixed header timestamp."""
    lines = [f"dim={m.dim} count={len(m)}"]
    for rid, vec in zip(m.row_ids, m.values):
        lines.append(rid + " " + " ".join(str(int(v)) for v in vec))
    data = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as raw, gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as fh:
        fh.write(data)


def write_synthetic(ds: Dataset, gt: GroundTruth, directory, vectors_dim: Optional[int] = 384) -> dict[str, Path]:
    directory = Path(directory)
    paths = save_dataset(ds, directory)
    paths["ground_truth"] = directory / "ground_truth.csv"
    gt.save(paths["ground_truth"])
    if vectors_dim:
        paths["vectors"] = directory / "sentence_vectors.txt.gz"
        save_integer_vectors(hashed_sentence_vectors(ds, vectors_dim), paths["vectors"])
    return paths


# -- scoring ----------------------------------------------------------------------


@dataclass(frozen=True)
class DetectionScore:
    precision: float
    recall: float
    f1: float
    true_positive_pairs: int
    predicted_pairs: int
    true_pairs: int
    precision_undefined: bool = False
    recall_undefined: bool = False


def _pairs(n: int) -> int:
    return n * (n - 1) // 2


def score_detection(a: ClusterAssignment, gt: GroundTruth) -> DetectionScore:
    """Pairwise precision/recall of "same kept cluster" against "same campaign".

    Undefined ratios (no predicted or no true pairs) are reported as 0 with a flag.
    """
    cells: dict[tuple[int, int], int] = {}
    cluster_sizes: dict[int, int] = {}
    for pid, label in zip(a.post_ids, a.labels.tolist()):
        if label < 0:
            continue
        cluster_sizes[label] = cluster_sizes.get(label, 0) + 1
        c = gt.campaign_of.get(pid)
        if c is not None:
            cells[(label, c)] = cells.get((label, c), 0) + 1
    tp = sum(_pairs(n) for n in cells.values())
    predicted = sum(_pairs(n) for n in cluster_sizes.values())
    true = sum(_pairs(len(members)) for members in gt.campaigns().values())
    precision = tp / predicted if predicted else 0.0
    recall = tp / true if true else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return DetectionScore(precision, recall, f1, tp, predicted, true, predicted == 0, true == 0)


# -- bundled fixture ------------------------------------------------------------

FIXTURE_SPEC = CampaignSpec(n_campaigns=12, posts_per_campaign=(10, 10), background_posts=1880, n_users=1000,
                            n_videos=250, n_channels=80, seed=7)


def bundled_fixture() -> Path:
    """Directory of the shipped 2,000-post collection (Table 1 platform mix)."""
    return Path(__file__).parent / "fixtures" / "table1_2000"


def regenerate_fixture(directory=None) -> dict[str, Path]:
    ds, gt = generate(FIXTURE_SPEC)
    return write_synthetic(ds, gt, directory or bundled_fixture())
