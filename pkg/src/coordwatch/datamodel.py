"""Normalized multi-platform post collection: records, ingestion, factuality joins.

Three input files describe a collection:

* posts    -- JSON-lines ``post_id, user_id, platform, published_time, text,
  action_type, video_id``
* videos   -- JSON-lines ``video_id, title, channel_id, published_time, captions``
* channels -- CSV ``channel_id,name,factuality`` (factuality blank when unlabeled)

Timestamps are normalized to integer UTC seconds. Factuality is an integer in
0..5 attached to channels and reaches posts through post -> video -> channel.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional

logger = logging.getLogger(__name__)

KNOWN_PLATFORMS = ("twitter", "facebook", "reddit")
ACTION_TYPES = ("post", "reply")
POST_KEYS = ("post_id", "user_id", "platform", "published_time", "text", "action_type", "video_id")
VIDEO_KEYS = ("video_id", "title", "channel_id", "published_time", "captions")
CHANNEL_HEADER = ("channel_id", "name", "factuality")


class MalformedRecord(ValueError):
    def __init__(self, line: int, reason: str, path: Optional[Path] = None):
        self.line = line
        self.reason = reason
        self.path = path
        where = f"{path}:{line}" if path is not None else f"line {line}"
        super().__init__(f"{where}: {reason}")


class DanglingReference(ValueError):
    def __init__(self, kind: str, ref_id: str):
        self.kind = kind
        self.ref_id = ref_id
        super().__init__(f"dangling {kind} reference: {ref_id!r}")


class InsufficientLabels(ValueError):
    pass


@dataclass(frozen=True)
class PostRecord:
    post_id: str
    user_id: str
    platform: str
    published_time: int
    text: str
    action_type: str = "post"
    video_id: Optional[str] = None

    @property
    def is_empty_text(self) -> bool:
        return not self.text.strip()


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    title: str
    channel_id: str
    published_time: Optional[int] = None
    captions: Optional[str] = None


@dataclass(frozen=True)
class ChannelRecord:
    channel_id: str
    name: str
    factuality: Optional[int] = None


@dataclass(frozen=True)
class IngestConfig:
    """Ingestion knobs.

    ``strict`` turns quarantined records (bad timestamps, duplicates, dangling
    references) into exceptions. ``window`` is an inclusive ``(start, end)``
    pair of UTC seconds; posts outside it are quarantined. ``action_types``
    keeps only posts whose action type is listed.
    """

    strict: bool = False
    window: Optional[tuple[int, int]] = None
    action_types: Optional[frozenset[str]] = None


@dataclass
class Dataset:
    posts: list[PostRecord]
    videos: dict[str, VideoRecord]
    channels: dict[str, ChannelRecord]
    quarantined: Counter = field(default_factory=Counter)

    def __post_init__(self):
        self._index = {p.post_id: i for i, p in enumerate(self.posts)}
        if len(self._index) != len(self.posts):
            raise ValueError("post_id values must be unique")

    def __len__(self) -> int:
        return len(self.posts)

    @property
    def post_ids(self) -> list[str]:
        return [p.post_id for p in self.posts]

    def post(self, post_id: str) -> PostRecord:
        return self.posts[self._index[post_id]]

    def channel_of(self, post: PostRecord) -> Optional[str]:
        if post.video_id is None:
            return None
        video = self.videos.get(post.video_id)
        return video.channel_id if video is not None else None

    def factuality_of(self, post: PostRecord) -> Optional[int]:
        channel_id = self.channel_of(post)
        if channel_id is None:
            return None
        channel = self.channels.get(channel_id)
        return channel.factuality if channel is not None else None

    def subset(self, post_ids: Iterable[str]) -> "Dataset":
        keep = set(post_ids)
        return Dataset([p for p in self.posts if p.post_id in keep], self.videos, self.channels)

    def platform_counts(self) -> dict[str, int]:
        return dict(sorted(Counter(p.platform for p in self.posts).items()))


# -- time handling ---------------------------------------------------------


def parse_timestamp(value) -> int:
    """Parse ISO-8601 text (or epoch seconds) to integer UTC seconds.

    Naive timestamps are taken as UTC; sub-second precision is truncated.
    """
    if isinstance(value, bool):
        raise ValueError(f"not a timestamp: {value!r}")
    if isinstance(value, (int, float)):
        if not math.isfinite(value):
            raise ValueError(f"not a timestamp: {value!r}")
        return int(math.floor(value))
    if not isinstance(value, str) or not value.strip():
        raise ValueError(f"not a timestamp: {value!r}")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(math.floor(dt.timestamp()))


def format_timestamp(seconds: int) -> str:
    return datetime.fromtimestamp(seconds, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# -- readers -----------------------------------------------------------------


def _read_jsonl(path: Path, required: tuple[str, ...]):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(lineno, f"invalid JSON ({exc.msg})", path) from None
            if not isinstance(raw, dict):
                raise MalformedRecord(lineno, "expected a JSON object", path)
            missing = [k for k in required if k not in raw]
            if missing:
                raise MalformedRecord(lineno, f"missing keys: {', '.join(missing)}", path)
            yield lineno, raw


def _opt_str(value) -> Optional[str]:
    if value is None:
        return None
    value = str(value)
    return value if value != "" else None


def _normalize_platform(value) -> str:
    return str(value).strip().lower()


def read_channels(path: Path, strict: bool = False, quarantined: Optional[Counter] = None) -> dict[str, ChannelRecord]:
    path = Path(path)
    quarantined = quarantined if quarantined is not None else Counter()
    channels: dict[str, ChannelRecord] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return channels
        if tuple(h.strip() for h in header) != CHANNEL_HEADER:
            raise MalformedRecord(1, f"expected header {','.join(CHANNEL_HEADER)}", path)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise MalformedRecord(lineno, f"expected 3 columns, got {len(row)}", path)
            channel_id, name, fact = (c.strip() for c in row)
            if not channel_id:
                raise MalformedRecord(lineno, "empty channel_id", path)
            factuality = None
            if fact:
                try:
                    factuality = int(fact)
                except ValueError:
                    raise MalformedRecord(lineno, f"factuality not an integer: {fact!r}", path) from None
                if not 0 <= factuality <= 5:
                    raise MalformedRecord(lineno, f"factuality outside 0..5: {factuality}", path)
            if channel_id in channels:
                if strict:
                    raise MalformedRecord(lineno, f"duplicate channel_id {channel_id!r}", path)
                quarantined["duplicate_channel"] += 1
                continue
            channels[channel_id] = ChannelRecord(channel_id, name, factuality)
    return channels


def read_videos(path: Path, strict: bool = False, quarantined: Optional[Counter] = None) -> dict[str, VideoRecord]:
    path = Path(path)
    quarantined = quarantined if quarantined is not None else Counter()
    videos: dict[str, VideoRecord] = {}
    for lineno, raw in _read_jsonl(path, ("video_id", "channel_id")):
        video_id = _opt_str(raw["video_id"])
        channel_id = _opt_str(raw["channel_id"])
        if video_id is None or channel_id is None:
            raise MalformedRecord(lineno, "video_id and channel_id must be non-empty", path)
        published = raw.get("published_time")
        if published in (None, ""):
            published = None
        else:
            try:
                published = parse_timestamp(published)
            except ValueError:
                if strict:
                    raise MalformedRecord(lineno, f"unparseable published_time {published!r}", path) from None
                quarantined["video_bad_timestamp"] += 1
                published = None
        if video_id in videos:
            if strict:
                raise MalformedRecord(lineno, f"duplicate video_id {video_id!r}", path)
            quarantined["duplicate_video"] += 1
            continue
        videos[video_id] = VideoRecord(
            video_id=video_id,
            title=str(raw.get("title") or ""),
            channel_id=channel_id,
            published_time=published,
            captions=_opt_str(raw.get("captions")),
        )
    return videos


def read_posts(path: Path, config: IngestConfig = IngestConfig(), quarantined: Optional[Counter] = None) -> list[PostRecord]:
    path = Path(path)
    quarantined = quarantined if quarantined is not None else Counter()
    posts: list[PostRecord] = []
    seen: set[str] = set()
    for lineno, raw in _read_jsonl(path, POST_KEYS):
        post_id = _opt_str(raw["post_id"])
        user_id = _opt_str(raw["user_id"])
        if post_id is None or user_id is None:
            raise MalformedRecord(lineno, "post_id and user_id must be non-empty", path)
        action = str(raw["action_type"] or "post").strip().lower()
        if action not in ACTION_TYPES:
            raise MalformedRecord(lineno, f"unknown action_type {action!r}", path)
        try:
            published = parse_timestamp(raw["published_time"])
        except ValueError:
            if config.strict:
                raise MalformedRecord(lineno, f"unparseable published_time {raw['published_time']!r}", path) from None
            quarantined["bad_timestamp"] += 1
            continue
        if post_id in seen:
            if config.strict:
                raise MalformedRecord(lineno, f"duplicate post_id {post_id!r}", path)
            quarantined["duplicate_post"] += 1
            continue
        if config.window is not None and not config.window[0] <= published <= config.window[1]:
            if config.strict:
                raise MalformedRecord(lineno, "published_time outside collection window", path)
            quarantined["outside_window"] += 1
            continue
        if config.action_types is not None and action not in config.action_types:
            quarantined["filtered_action_type"] += 1
            continue
        seen.add(post_id)
        posts.append(
            PostRecord(
                post_id=post_id,
                user_id=user_id,
                platform=_normalize_platform(raw["platform"]),
                published_time=published,
                text="" if raw["text"] is None else str(raw["text"]),
                action_type=action,
                video_id=_opt_str(raw["video_id"]),
            )
        )
    return posts


def ingest(posts_path, videos_path, channels_path, config: IngestConfig = IngestConfig()) -> Dataset:
    """Read the three input files into a referentially closed :class:`Dataset`.

    Dangling references raise :class:`DanglingReference` in strict mode;
    otherwise the offending records are dropped and counted in
    ``Dataset.quarantined``.
    """
    quarantined: Counter = Counter()
    channels = read_channels(channels_path, config.strict, quarantined)
    videos = read_videos(videos_path, config.strict, quarantined)
    for video_id in list(videos):
        if videos[video_id].channel_id not in channels:
            if config.strict:
                raise DanglingReference("channel", videos[video_id].channel_id)
            quarantined["dangling_channel"] += 1
            del videos[video_id]
    posts = []
    for post in read_posts(posts_path, config, quarantined):
        if post.video_id is not None and post.video_id not in videos:
            if config.strict:
                raise DanglingReference("video", post.video_id)
            quarantined["dangling_video"] += 1
            continue
        posts.append(post)
    if quarantined:
        logger.warning("quarantined records: %s", dict(quarantined))
    return Dataset(posts, videos, channels, quarantined)


def load_dataset(directory, config: IngestConfig = IngestConfig()) -> Dataset:
    directory = Path(directory)
    return ingest(directory / "posts.jsonl", directory / "videos.jsonl", directory / "channels.csv", config)


# -- writers -----------------------------------------------------------------


def write_posts(posts: Iterable[PostRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in posts:
            row = {
                "post_id": p.post_id,
                "user_id": p.user_id,
                "platform": p.platform,
                "published_time": format_timestamp(p.published_time),
                "text": p.text,
                "action_type": p.action_type,
                "video_id": p.video_id,
            }
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def write_videos(videos: Iterable[VideoRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in videos:
            row = {
                "video_id": v.video_id,
                "title": v.title,
                "channel_id": v.channel_id,
                "published_time": None if v.published_time is None else format_timestamp(v.published_time),
                "captions": v.captions,
            }
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def write_channels(channels: Iterable[ChannelRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CHANNEL_HEADER)
        for c in channels:
            writer.writerow([c.channel_id, c.name, "" if c.factuality is None else c.factuality])


def save_dataset(ds: Dataset, directory) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "posts": directory / "posts.jsonl",
        "videos": directory / "videos.jsonl",
        "channels": directory / "channels.csv",
    }
    write_posts(ds.posts, paths["posts"])
    write_videos(ds.videos.values(), paths["videos"])
    write_channels(ds.channels.values(), paths["channels"])
    return paths


# -- factuality --------------------------------------------------------------


@dataclass(frozen=True)
class LabeledStats:
    post_scores: dict[str, int]
    counts: dict[int, int]
    n_posts: int

    @property
    def n_labeled(self) -> int:
        return len(self.post_scores)

    @property
    def n_unlabeled(self) -> int:
        return self.n_posts - self.n_labeled

    @property
    def fraction_labeled(self) -> float:
        return self.n_labeled / self.n_posts if self.n_posts else 0.0

    def fraction(self, score: int) -> float:
        """Share of *labeled* posts carrying ``score``."""
        return self.counts.get(score, 0) / self.n_labeled if self.n_labeled else 0.0


def join_factuality(ds: Dataset) -> LabeledStats:
    scores = {}
    for post in ds.posts:
        score = ds.factuality_of(post)
        if score is not None:
            scores[post.post_id] = score
    counts = Counter(scores.values())
    return LabeledStats(scores, {s: counts.get(s, 0) for s in range(6)}, len(ds.posts))


def population_std(values) -> float:
    values = [float(v) for v in values]
    n = len(values)
    if n == 0:
        raise ValueError("std of an empty sequence")
    mean = math.fsum(values) / n
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / n)


def dataset_factuality_std(ds: Dataset) -> float:
    """Population standard deviation of factuality over all labeled posts."""
    scores = list(join_factuality(ds).post_scores.values())
    if len(scores) < 2:
        raise InsufficientLabels(f"need at least 2 labeled posts, found {len(scores)}")
    return population_std(scores)
